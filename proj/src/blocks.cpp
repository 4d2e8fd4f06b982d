#include "splat/nn/blocks.hpp"

namespace splat::nn {

BoundStore bind(Tape& tape, const ParamStore& store) {
    BoundStore b;
    b.store = &store;
    b.tape = &tape;
    b.vars = bind_params(tape, store);
    return b;
}

void register_linear(ParamStore& store, const std::string& prefix, std::int64_t d_in,
                     std::int64_t d_out, RngStream& rng, bool zero_init) {
    if (zero_init)
        param_zeros(store, prefix + ".w", d_in, d_out);
    else
        param_trunc_normal(store, prefix + ".w", d_in, d_out, rng);
    param_zeros(store, prefix + ".b", 1, d_out);
}

void register_layer_norm(ParamStore& store, const std::string& prefix, std::int64_t d) {
    param_ones(store, prefix + ".g", 1, d);
    param_zeros(store, prefix + ".b", 1, d);
}

void register_attention_block(ParamStore& store, const std::string& prefix,
                              std::int64_t d_model, std::int64_t d_ctx, RngStream& rng) {
    register_layer_norm(store, prefix + ".ln", d_model);
    if (d_ctx > 0) register_layer_norm(store, prefix + ".ctx_ln", d_ctx);
    const std::int64_t d_kv = d_ctx > 0 ? d_ctx : d_model;
    register_linear(store, prefix + ".q", d_model, d_model, rng);
    register_linear(store, prefix + ".k", d_kv, d_model, rng);
    register_linear(store, prefix + ".v", d_kv, d_model, rng);
    register_linear(store, prefix + ".o", d_model, d_model, rng, /*zero_init=*/true);
}

void register_mlp_block(ParamStore& store, const std::string& prefix,
                        std::int64_t d_model, RngStream& rng, int expansion) {
    register_layer_norm(store, prefix + ".ln", d_model);
    register_linear(store, prefix + ".fc1", d_model, d_model * expansion, rng);
    register_linear(store, prefix + ".fc2", d_model * expansion, d_model, rng,
                    /*zero_init=*/true);
}

Var linear(const BoundStore& b, const std::string& prefix, Var x) {
    Tape& t = *b.tape;
    return t.add_rowvec(t.matmul(x, b[prefix + ".w"]), b[prefix + ".b"]);
}

Var layer_norm_op(const BoundStore& b, const std::string& prefix, Var x) {
    return b.tape->layer_norm(x, b[prefix + ".g"], b[prefix + ".b"]);
}

Var attention_block(const BoundStore& b, const std::string& prefix, Var x,
                    std::optional<Var> context, int heads,
                    const VarOverrides& overrides) {
    Tape& t = *b.tape;
    const auto weight = [&](const std::string& name) {
        auto it = overrides.find(name);
        return it != overrides.end() ? it->second : b[name];
    };
    const Var q_in = layer_norm_op(b, prefix + ".ln", x);
    const Var kv_in =
        context ? layer_norm_op(b, prefix + ".ctx_ln", *context) : q_in;
    const Var attn = t.attention(
        q_in, kv_in, weight(prefix + ".q.w"), b[prefix + ".q.b"],
        weight(prefix + ".k.w"), b[prefix + ".k.b"], weight(prefix + ".v.w"),
        b[prefix + ".v.b"], weight(prefix + ".o.w"), b[prefix + ".o.b"], heads);
    return t.add(x, attn);
}

Var mlp_block(const BoundStore& b, const std::string& prefix, Var x) {
    Tape& t = *b.tape;
    Var h = layer_norm_op(b, prefix + ".ln", x);
    h = linear(b, prefix + ".fc1", h);
    h = t.gelu(h);
    h = linear(b, prefix + ".fc2", h);
    return t.add(x, h);
}

} // namespace splat::nn
