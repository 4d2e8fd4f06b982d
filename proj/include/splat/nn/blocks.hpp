#pragma once

#include <map>
#include <optional>
#include <string>

#include "splat/nn/params.hpp"
#include "splat/nn/tape.hpp"

namespace splat::nn {

// Store entries bound to a tape for one forward/backward pass.
struct BoundStore {
    const ParamStore* store = nullptr;
    Tape* tape = nullptr;
    std::vector<Var> vars;

    Var operator[](const std::string& name) const {
        return vars[store->index_of(name)];
    }
};

BoundStore bind(Tape& tape, const ParamStore& store);

// -- registration (adds named tensors; call once when building a model) ----

void register_linear(ParamStore& store, const std::string& prefix, std::int64_t d_in,
                     std::int64_t d_out, RngStream& rng, bool zero_init = false);
void register_layer_norm(ParamStore& store, const std::string& prefix, std::int64_t d);
// d_ctx == 0 registers a self-attention block
void register_attention_block(ParamStore& store, const std::string& prefix,
                              std::int64_t d_model, std::int64_t d_ctx, RngStream& rng);
void register_mlp_block(ParamStore& store, const std::string& prefix,
                        std::int64_t d_model, RngStream& rng, int expansion = 4);

// -- forward (tape ops; prefix must match a registration) ------------------

Var linear(const BoundStore& b, const std::string& prefix, Var x);
Var layer_norm_op(const BoundStore& b, const std::string& prefix, Var x);

// Substitute vars for named weights (adapter-patched matrices); lookups
// fall back to the bound store when a name is absent.
using VarOverrides = std::map<std::string, Var>;

// Pre-norm residual attention: x + Attn(LN(x), ctx-or-LN(x)). The output
// projection starts at zero so a freshly built block is the identity.
Var attention_block(const BoundStore& b, const std::string& prefix, Var x,
                    std::optional<Var> context, int heads,
                    const VarOverrides& overrides = {});

// Pre-norm residual MLP with GELU, expansion must match registration.
Var mlp_block(const BoundStore& b, const std::string& prefix, Var x);

} // namespace splat::nn
