#include "splat/nn/tape.hpp"

#include <cmath>
#include <memory>

namespace splat::nn {

std::int32_t Tape::check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= slots_.size())
        throw contract_violation("Tape: invalid var");
    return v.id;
}

Var Tape::input(Tensor value, bool requires_grad) {
    Slot s;
    s.value = std::move(value);
    s.requires_grad = requires_grad;
    slots_.push_back(std::move(s));
    return Var{static_cast<std::int32_t>(slots_.size() - 1)};
}

const Tensor& Tape::grad(Var v) const {
    const Slot& s = slots_[check(v)];
    if (!s.grad_alloc)
        throw contract_violation("Tape::grad: no gradient recorded for var");
    return s.grad;
}

Tensor& Tape::grad_buf(Var v) {
    Slot& s = slots_[check(v)];
    if (!s.grad_alloc) {
        s.grad = Tensor::zeros(s.value.rows, s.value.cols);
        s.grad_alloc = true;
    }
    return s.grad;
}

void Tape::add_grad(Var v, const Tensor& g) {
    Tensor& buf = grad_buf(v);
    check_same_shape(buf, g, "Tape::add_grad");
    buf.map() += g.map();
}

Var Tape::emit(Tensor value, bool requires_grad, std::function<void(Tape&)> bw) {
    Var out = input(std::move(value), requires_grad);
    if (requires_grad) nodes_.push_back(Node{std::move(bw)});
    return out;
}

void Tape::backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
    for (const auto& [v, g] : seeds) {
        if (!requires_grad(v))
            throw contract_violation("Tape::backward: seeding a non-grad var");
        add_grad(v, g);
    }
    // every requires-grad slot gets a buffer so harvesting never misses
    for (auto& s : slots_) {
        if (s.requires_grad && !s.grad_alloc) {
            s.grad = Tensor::zeros(s.value.rows, s.value.cols);
            s.grad_alloc = true;
        }
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward(*this);
}

// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.cols != tb.rows) throw shape_error("matmul: inner dimensions differ");
    Tensor out(ta.rows, tb.cols);
    out.map().noalias() = ta.map() * tb.map();
    const bool rg = requires_grad(a) || requires_grad(b);
    Var o = emit(std::move(out), rg, [a, b](Tape& t) {});
    if (rg) {
        nodes_.back().backward = [a, b, o](Tape& t) {
            const Tensor& g = t.grad(o);
            if (t.requires_grad(a)) {
                Tensor da(t.val(a).rows, t.val(a).cols);
                da.map().noalias() = g.map() * t.val(b).map().transpose();
                t.add_grad(a, da);
            }
            if (t.requires_grad(b)) {
                Tensor db(t.val(b).rows, t.val(b).cols);
                db.map().noalias() = t.val(a).map().transpose() * g.map();
                t.add_grad(b, db);
            }
        };
    }
    return o;
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    out.map() += tb.map();
    const bool rg = requires_grad(a) || requires_grad(b);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [a, b, o](Tape& t) {
            const Tensor& g = t.grad(o);
            if (t.requires_grad(a)) t.add_grad(a, g);
            if (t.requires_grad(b)) t.add_grad(b, g);
        };
    }
    return o;
}

Var Tape::add_rowvec(Var x, Var b) {
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    if (tb.rows != 1 || tb.cols != tx.cols)
        throw shape_error("add_rowvec: bias must be 1 x cols");
    Tensor out = tx;
    out.map().rowwise() += tb.map().row(0);
    const bool rg = requires_grad(x) || requires_grad(b);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [x, b, o](Tape& t) {
            const Tensor& g = t.grad(o);
            if (t.requires_grad(x)) t.add_grad(x, g);
            if (t.requires_grad(b)) {
                Tensor db(1, g.cols);
                db.map().row(0) = g.map().colwise().sum();
                t.add_grad(b, db);
            }
        };
    }
    return o;
}

Var Tape::scale(Var a, double c) {
    Tensor out = val(a);
    out.map() *= c;
    const bool rg = requires_grad(a);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [a, c, o](Tape& t) {
            Tensor da = t.grad(o);
            da.map() *= c;
            t.add_grad(a, da);
        };
    }
    return o;
}

Var Tape::transpose(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.cols, ta.rows);
    out.map() = ta.map().transpose();
    const bool rg = requires_grad(a);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [a, o](Tape& t) {
            const Tensor& g = t.grad(o);
            Tensor da(g.cols, g.rows);
            da.map() = g.map().transpose();
            t.add_grad(a, da);
        };
    }
    return o;
}

Var Tape::gelu(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (std::int64_t i = 0; i < ta.size(); ++i) {
        const double x = ta.data[static_cast<std::size_t>(i)];
        out.data[static_cast<std::size_t>(i)] =
            0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
    }
    const bool rg = requires_grad(a);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [a, o](Tape& t) {
            const Tensor& g = t.grad(o);
            const Tensor& ta = t.val(a);
            Tensor da(ta.rows, ta.cols);
            constexpr double inv_sqrt2 = 0.7071067811865476;
            constexpr double inv_sqrt2pi = 0.3989422804014327;
            for (std::int64_t i = 0; i < ta.size(); ++i) {
                const double x = ta.data[static_cast<std::size_t>(i)];
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                da.data[static_cast<std::size_t>(i)] =
                    g.data[static_cast<std::size_t>(i)] * (cdf + x * pdf);
            }
            t.add_grad(a, da);
        };
    }
    return o;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gamma);
    const Tensor& tb = val(beta);
    if (tg.rows != 1 || tg.cols != tx.cols || tb.rows != 1 || tb.cols != tx.cols)
        throw shape_error("layer_norm: gamma/beta must be 1 x cols");

    auto saved = std::make_shared<Tensor>(tx.rows, tx.cols); // normalized x
    auto inv_std = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(tx.rows));
    Tensor out(tx.rows, tx.cols);
    for (std::int64_t r = 0; r < tx.rows; ++r) {
        const auto row = tx.map().row(r);
        const double mu = row.mean();
        const double var = (row.array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t c = 0; c < tx.cols; ++c) {
            const double xhat = (tx.at(r, c) - mu) * is;
            saved->at(r, c) = xhat;
            out.at(r, c) = tg.at(0, c) * xhat + tb.at(0, c);
        }
    }
    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [x, gamma, beta, o, saved, inv_std](Tape& t) {
            const Tensor& g = t.grad(o);
            const Tensor& tg = t.val(gamma);
            const std::int64_t rows = g.rows, cols = g.cols;
            if (t.requires_grad(gamma)) {
                Tensor dg(1, cols);
                dg.map().row(0) = (g.map().array() * saved->map().array())
                                      .colwise().sum();
                t.add_grad(gamma, dg);
            }
            if (t.requires_grad(beta)) {
                Tensor db(1, cols);
                db.map().row(0) = g.map().colwise().sum();
                t.add_grad(beta, db);
            }
            if (t.requires_grad(x)) {
                Tensor dx(rows, cols);
                for (std::int64_t r = 0; r < rows; ++r) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::int64_t c = 0; c < cols; ++c) {
                        const double d = g.at(r, c) * tg.at(0, c);
                        sum_d += d;
                        sum_dx += d * saved->at(r, c);
                    }
                    const double is = (*inv_std)[static_cast<std::size_t>(r)];
                    const double inv_n = 1.0 / static_cast<double>(cols);
                    for (std::int64_t c = 0; c < cols; ++c) {
                        const double d = g.at(r, c) * tg.at(0, c);
                        dx.at(r, c) = is * (d - inv_n * sum_d -
                                            saved->at(r, c) * inv_n * sum_dx);
                    }
                }
                t.add_grad(x, dx);
            }
        };
    }
    return o;
}

Var Tape::softmax_rows(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.rows, ta.cols);
    for (std::int64_t r = 0; r < ta.rows; ++r) {
        const double mx = ta.map().row(r).maxCoeff();
        double sum = 0.0;
        for (std::int64_t c = 0; c < ta.cols; ++c) {
            const double e = std::exp(ta.at(r, c) - mx);
            out.at(r, c) = e;
            sum += e;
        }
        out.map().row(r) /= sum;
    }
    const bool rg = requires_grad(a);
    auto saved = std::make_shared<Tensor>(out);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [a, o, saved](Tape& t) {
            const Tensor& g = t.grad(o);
            Tensor da(g.rows, g.cols);
            for (std::int64_t r = 0; r < g.rows; ++r) {
                double dot = 0.0;
                for (std::int64_t c = 0; c < g.cols; ++c)
                    dot += g.at(r, c) * saved->at(r, c);
                for (std::int64_t c = 0; c < g.cols; ++c)
                    da.at(r, c) = saved->at(r, c) * (g.at(r, c) - dot);
            }
            t.add_grad(a, da);
        };
    }
    return o;
}

Var Tape::mse(Var a, const Tensor& target) {
    const Tensor& ta = val(a);
    check_same_shape(ta, target, "mse");
    const double n = static_cast<double>(ta.size());
    double loss = 0.0;
    for (std::int64_t i = 0; i < ta.size(); ++i) {
        const double d = ta.data[static_cast<std::size_t>(i)] -
                         target.data[static_cast<std::size_t>(i)];
        loss += d * d;
    }
    Tensor out(1, 1);
    out.data[0] = loss / n;
    const bool rg = requires_grad(a);
    auto tgt = std::make_shared<Tensor>(target);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [a, o, tgt, n](Tape& t) {
            const double gs = t.grad(o).data[0];
            const Tensor& ta = t.val(a);
            Tensor da(ta.rows, ta.cols);
            for (std::int64_t i = 0; i < ta.size(); ++i)
                da.data[static_cast<std::size_t>(i)] =
                    gs * 2.0 *
                    (ta.data[static_cast<std::size_t>(i)] -
                     tgt->data[static_cast<std::size_t>(i)]) / n;
            t.add_grad(a, da);
        };
    }
    return o;
}

Var Tape::add_per_view(Var x, Var e, int views) {
    const Tensor& tx = val(x);
    const Tensor& te = val(e);
    if (views < 1 || tx.rows % views != 0)
        throw shape_error("add_per_view: rows not divisible by views");
    if (te.rows != views || te.cols != tx.cols)
        throw shape_error("add_per_view: embedding must be views x cols");
    const std::int64_t block = tx.rows / views;
    Tensor out = tx;
    for (int v = 0; v < views; ++v)
        out.map().middleRows(v * block, block).rowwise() += te.map().row(v);
    const bool rg = requires_grad(x) || requires_grad(e);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [x, e, o, views, block](Tape& t) {
            const Tensor& g = t.grad(o);
            if (t.requires_grad(x)) t.add_grad(x, g);
            if (t.requires_grad(e)) {
                Tensor de(views, g.cols);
                for (int v = 0; v < views; ++v)
                    de.map().row(v) =
                        g.map().middleRows(v * block, block).colwise().sum();
                t.add_grad(e, de);
            }
        };
    }
    return o;
}

Var Tape::add_tile_rows(Var x, Var pos, int views) {
    const Tensor& tx = val(x);
    const Tensor& tp = val(pos);
    if (views < 1 || tx.rows != tp.rows * views || tx.cols != tp.cols)
        throw shape_error("add_tile_rows: pos must tile x across views");
    Tensor out = tx;
    for (int v = 0; v < views; ++v)
        out.map().middleRows(v * tp.rows, tp.rows) += tp.map();
    const bool rg = requires_grad(x) || requires_grad(pos);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        const std::int64_t block = tp.rows;
        nodes_.back().backward = [x, pos, o, views, block](Tape& t) {
            const Tensor& g = t.grad(o);
            if (t.requires_grad(x)) t.add_grad(x, g);
            if (t.requires_grad(pos)) {
                Tensor dp(block, g.cols);
                dp.map().setZero();
                for (int v = 0; v < views; ++v)
                    dp.map() += g.map().middleRows(v * block, block);
                t.add_grad(pos, dp);
            }
        };
    }
    return o;
}

Var Tape::pixel_shuffle(Var x, int views, int h, int w, int r) {
    const Tensor& tx = val(x);
    if (views < 1 || h < 1 || w < 1 || r < 1)
        throw shape_error("pixel_shuffle: bad geometry");
    if (tx.rows != static_cast<std::int64_t>(views) * h * w)
        throw shape_error("pixel_shuffle: row count != views*h*w");
    if (tx.cols % (static_cast<std::int64_t>(r) * r) != 0)
        throw shape_error("pixel_shuffle: channels not divisible by r^2");
    const std::int64_t c_out = tx.cols / (static_cast<std::int64_t>(r) * r);
    const std::int64_t hw_out = static_cast<std::int64_t>(h) * r * w * r;
    Tensor out(views * hw_out, c_out);
    auto map_rows = [h, w, r, hw_out](int v, int i, int j, int di, int dj) {
        const std::int64_t in_row =
            static_cast<std::int64_t>(v) * h * w + static_cast<std::int64_t>(i) * w + j;
        const std::int64_t out_row =
            static_cast<std::int64_t>(v) * hw_out +
            (static_cast<std::int64_t>(i) * r + di) * (static_cast<std::int64_t>(w) * r) +
            (static_cast<std::int64_t>(j) * r + dj);
        return std::pair(in_row, out_row);
    };
    for (int v = 0; v < views; ++v)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int di = 0; di < r; ++di)
                    for (int dj = 0; dj < r; ++dj) {
                        const auto [ir, orow] = map_rows(v, i, j, di, dj);
                        const std::int64_t cbase =
                            (static_cast<std::int64_t>(di) * r + dj) * c_out;
                        for (std::int64_t c = 0; c < c_out; ++c)
                            out.at(orow, c) = tx.at(ir, cbase + c);
                    }
    const bool rg = requires_grad(x);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [x, o, views, h, w, r, c_out, hw_out,
                                  map_rows](Tape& t) {
            const Tensor& g = t.grad(o);
            const Tensor& tx = t.val(x);
            Tensor dx(tx.rows, tx.cols);
            for (int v = 0; v < views; ++v)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int di = 0; di < r; ++di)
                            for (int dj = 0; dj < r; ++dj) {
                                const auto [ir, orow] = map_rows(v, i, j, di, dj);
                                const std::int64_t cbase =
                                    (static_cast<std::int64_t>(di) * r + dj) * c_out;
                                for (std::int64_t c = 0; c < c_out; ++c)
                                    dx.at(ir, cbase + c) = g.at(orow, c);
                            }
            t.add_grad(x, dx);
        };
    }
    return o;
}

Var Tape::attention(Var x_q, Var x_kv, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv,
                    Var wo, Var bo, int heads) {
    const Tensor& txq = val(x_q);
    const Tensor& txkv = val(x_kv);
    const std::int64_t d_model = val(wq).cols;
    if (heads < 1 || d_model % heads != 0)
        throw shape_error("attention: width not divisible by heads");
    if (val(wq).rows != txq.cols || val(wk).rows != txkv.cols ||
        val(wv).rows != txkv.cols || val(wo).rows != d_model ||
        val(wk).cols != d_model || val(wv).cols != d_model)
        throw shape_error("attention: projection shapes do not match inputs");
    const std::int64_t dh = d_model / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::int64_t m = txq.rows, mk = txkv.rows;

    struct Saved {
        Tensor q, k, v, probs, o_cat; // probs: heads stacked rows (heads*m x mk)
    };
    auto sv = std::make_shared<Saved>();
    sv->q = Tensor(m, d_model);
    sv->q.map().noalias() = txq.map() * val(wq).map();
    sv->q.map().rowwise() += val(bq).map().row(0);
    sv->k = Tensor(mk, d_model);
    sv->k.map().noalias() = txkv.map() * val(wk).map();
    sv->k.map().rowwise() += val(bk).map().row(0);
    sv->v = Tensor(mk, d_model);
    sv->v.map().noalias() = txkv.map() * val(wv).map();
    sv->v.map().rowwise() += val(bv).map().row(0);

    sv->probs = Tensor(heads * m, mk);
    sv->o_cat = Tensor(m, d_model);
    for (int hh = 0; hh < heads; ++hh) {
        RowMat scores = sv->q.map().middleCols(hh * dh, dh) *
                        sv->k.map().middleCols(hh * dh, dh).transpose() * inv_sqrt_dh;
        for (std::int64_t rr = 0; rr < m; ++rr) {
            const double mx = scores.row(rr).maxCoeff();
            Eigen::ArrayXd e = (scores.row(rr).array() - mx).exp();
            const double sum = e.sum();
            sv->probs.map().row(hh * m + rr) = (e / sum).matrix().transpose();
        }
        sv->o_cat.map().middleCols(hh * dh, dh).noalias() =
            sv->probs.map().middleRows(hh * m, m) * sv->v.map().middleCols(hh * dh, dh);
    }
    Tensor out(m, d_model);
    out.map().noalias() = sv->o_cat.map() * val(wo).map();
    out.map().rowwise() += val(bo).map().row(0);

    const bool rg = requires_grad(x_q) || requires_grad(x_kv) || requires_grad(wq) ||
                    requires_grad(bq) || requires_grad(wk) || requires_grad(bk) ||
                    requires_grad(wv) || requires_grad(bv) || requires_grad(wo) ||
                    requires_grad(bo);
    Var o = emit(std::move(out), rg, nullptr);
    if (rg) {
        nodes_.back().backward = [=](Tape& t) {
            const Tensor& g = t.grad(o);
            const Tensor& txq = t.val(x_q);
            const Tensor& txkv = t.val(x_kv);
            // output projection
            if (t.requires_grad(wo)) {
                Tensor dwo(d_model, d_model);
                dwo.map().noalias() = sv->o_cat.map().transpose() * g.map();
                t.add_grad(wo, dwo);
            }
            if (t.requires_grad(bo)) {
                Tensor dbo(1, d_model);
                dbo.map().row(0) = g.map().colwise().sum();
                t.add_grad(bo, dbo);
            }
            RowMat g_ocat = g.map() * t.val(wo).map().transpose();

            Tensor gq(m, d_model), gk(mk, d_model), gv(mk, d_model);
            gq.map().setZero();
            gk.map().setZero();
            gv.map().setZero();
            for (int hh = 0; hh < heads; ++hh) {
                auto p = sv->probs.map().middleRows(hh * m, m);
                auto vh = sv->v.map().middleCols(hh * dh, dh);
                RowMat g_oh = g_ocat.middleCols(hh * dh, dh);
                RowMat g_p = g_oh * vh.transpose();
                gv.map().middleCols(hh * dh, dh).noalias() = p.transpose() * g_oh;
                // softmax backward per row
                RowMat g_s(m, mk);
                for (std::int64_t rr = 0; rr < m; ++rr) {
                    const double dot = (g_p.row(rr).array() * p.row(rr).array()).sum();
                    g_s.row(rr) =
                        (p.row(rr).array() * (g_p.row(rr).array() - dot)).matrix();
                }
                g_s *= inv_sqrt_dh;
                gq.map().middleCols(hh * dh, dh).noalias() =
                    g_s * sv->k.map().middleCols(hh * dh, dh);
                gk.map().middleCols(hh * dh, dh).noalias() =
                    g_s.transpose() * sv->q.map().middleCols(hh * dh, dh);
            }
            // projections
            auto backprop_proj = [&](Var w, Var b, Var xin, const Tensor& gp,
                                     const Tensor& tx) {
                if (t.requires_grad(w)) {
                    Tensor dw(tx.cols, d_model);
                    dw.map().noalias() = tx.map().transpose() * gp.map();
                    t.add_grad(w, dw);
                }
                if (t.requires_grad(b)) {
                    Tensor db(1, d_model);
                    db.map().row(0) = gp.map().colwise().sum();
                    t.add_grad(b, db);
                }
                if (t.requires_grad(xin)) {
                    Tensor dx(tx.rows, tx.cols);
                    dx.map().noalias() = gp.map() * t.val(w).map().transpose();
                    t.add_grad(xin, dx);
                }
            };
            backprop_proj(wq, bq, x_q, gq, txq);
            backprop_proj(wk, bk, x_kv, gk, txkv);
            backprop_proj(wv, bv, x_kv, gv, txkv);
        };
    }
    return o;
}

} // namespace splat::nn
