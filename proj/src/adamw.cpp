#include "splat/nn/adamw.hpp"

#include <cmath>

#include "splat/errors.hpp"

namespace splat::nn {

void adamw_step(ParamStore& store, const std::vector<Tensor>& grads,
                std::vector<Tensor>& m, std::vector<Tensor>& v,
                const AdamWConfig& cfg, std::int64_t step) {
    if (grads.size() != store.size())
        throw contract_violation("adamw_step: grads do not align with store");
    if (step < 1) throw contract_violation("adamw_step: step counts from 1");
    if (m.empty()) {
        m.reserve(store.size());
        v.reserve(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            const Tensor& p = store.entry(i).value;
            m.push_back(Tensor::zeros(p.rows, p.cols));
            v.push_back(Tensor::zeros(p.rows, p.cols));
        }
    }
    if (m.size() != store.size())
        throw contract_violation("adamw_step: moment state does not match store");

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));

    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& e = store.entry(i);
        const Tensor& g = grads[i];
        if (!e.trainable) {
            if (g.size() != 0)
                throw contract_violation("adamw_step: gradient supplied for frozen tensor " +
                                         e.name);
            continue;
        }
        check_same_shape(e.value, g, "adamw_step: " + e.name);
        Tensor& mi = m[i];
        Tensor& vi = v[i];
        for (std::int64_t k = 0; k < g.size(); ++k) {
            const auto idx = static_cast<std::size_t>(k);
            const double gk = g.data[idx];
            mi.data[idx] = cfg.beta1 * mi.data[idx] + (1.0 - cfg.beta1) * gk;
            vi.data[idx] = cfg.beta2 * vi.data[idx] + (1.0 - cfg.beta2) * gk * gk;
            const double mhat = mi.data[idx] / bc1;
            const double vhat = vi.data[idx] / bc2;
            e.value.data[idx] -=
                cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                          cfg.weight_decay * e.value.data[idx]);
        }
    }
}

} // namespace splat::nn
