#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "splat/nn/tensor.hpp"

namespace splat::nn {

/// Handle to a value recorded on a Tape.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape: ops record a backward closure; backward() replays
/// them in exact reverse execution order, accumulating gradients additively
/// into inputs that require them.
class Tape {
public:
    Var input(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return input(std::move(value), false); }

    const Tensor& val(Var v) const { return slots_[check(v)].value; }
    bool requires_grad(Var v) const { return slots_[check(v)].requires_grad; }

    /// Gradient accumulated by the last backward(); zeros if untouched.
    const Tensor& grad(Var v) const;

    /// Seed upstream gradients at one or more vars and run the reverse sweep.
    void backward(const std::vector<std::pair<Var, Tensor>>& seeds);

    // ---- differentiable ops ----
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);              // same shape
    Var add_rowvec(Var x, Var b);       // b is 1 x cols, broadcast over rows
    Var scale(Var a, double c);
    Var transpose(Var a);
    Var gelu(Var a);                    // exact erf form
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
    Var softmax_rows(Var a);
    /// Mean squared error against a constant target; output is 1x1.
    Var mse(Var a, const Tensor& target);
    /// Rows are grouped per view (views blocks of h*w rows); adds e.row(view)
    /// to every row of the corresponding block.
    Var add_per_view(Var x, Var e, int views);
    /// Adds pos (h*w x D) to each view block of x (views*h*w x D).
    Var add_tile_rows(Var x, Var pos, int views);
    /// Space-to-depth inverse per view block: (views*h*w) x (r*r*c) ->
    /// (views*h*r*w*r) x c, raster order within each r x r cell.
    Var pixel_shuffle(Var x, int views, int h, int w, int r);
    /// Fused multi-head attention; context tokens may differ in width.
    /// All weight matrices map inputs on the left: q = x * wq + bq.
    Var attention(Var x_q, Var x_kv, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv,
                  Var wo, Var bo, int heads);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Slot {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_alloc = false;
    };
    struct Node {
        std::function<void(Tape&)> backward;
    };

    std::int32_t check(Var v) const;
    Tensor& grad_buf(Var v);
    void add_grad(Var v, const Tensor& g);
    Var emit(Tensor value, bool requires_grad, std::function<void(Tape&)> bw);

    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    Tensor empty_grad_;
};

} // namespace splat::nn
