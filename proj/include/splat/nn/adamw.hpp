#pragma once

#include <cstdint>
#include <vector>

#include "splat/nn/params.hpp"

namespace splat::nn {

struct AdamWConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// One decoupled-weight-decay Adam update with bias correction. grads must be
// aligned with store entries: a real tensor for every trainable entry, an
// empty (0x0) tensor for frozen ones. m/v carry moment state across calls;
// step counts from 1.
void adamw_step(ParamStore& store, const std::vector<Tensor>& grads,
                std::vector<Tensor>& m, std::vector<Tensor>& v,
                const AdamWConfig& cfg, std::int64_t step);

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& store, const std::vector<Tensor>& grads) {
        adamw_step(store, grads, m_, v_, cfg_, ++t_);
    }

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t steps_taken() const { return t_; }

private:
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

} // namespace splat::nn
