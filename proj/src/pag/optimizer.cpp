#include "s2d/pag/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "s2d/core/error.hpp"

namespace s2d::pag {

double lr_at(long step, double peak, long warmup, long total) {
    if (step <= 0) return 0.0;
    if (warmup > 0 && step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (total <= warmup) return peak;
    if (step >= total) return 0.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const std::vector<Parameter*>& params, double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const Real b1 = static_cast<Real>(config_.beta1), b2 = static_cast<Real>(config_.beta2);
    for (Parameter* p : params) {
        if (p->grad.size() == 0) continue;  // untouched by this batch
        if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
            throw Error(ErrorKind::shape, "gradient shape mismatch for " + p->name);
        }
        auto& mo = moments_[p->name];
        if (mo.m.size() == 0) {
            mo.m = Matrix::Zero(p->value.rows(), p->value.cols());
            mo.v = Matrix::Zero(p->value.rows(), p->value.cols());
        }
        if (p->decay && config_.weight_decay != 0) p->value *= static_cast<Real>(1.0 - lr * config_.weight_decay);
        mo.m = b1 * mo.m + (Real(1) - b1) * p->grad;
        mo.v = b2 * mo.v + (Real(1) - b2) * p->grad.cwiseProduct(p->grad);
        const Real step_size = static_cast<Real>(lr / c1);
        const Real denom_scale = static_cast<Real>(1.0 / std::sqrt(c2));
        p->value.array() -=
            step_size * mo.m.array() / (mo.v.array().sqrt() * denom_scale + static_cast<Real>(config_.eps));
    }
}

}  // namespace s2d::pag
