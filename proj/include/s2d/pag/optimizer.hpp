#pragma once

#include <map>
#include <string>
#include <vector>

#include "s2d/core/params.hpp"

namespace s2d::pag {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// Linear warmup to `peak` at step == warmup, then cosine decay to 0 at
/// step == total. Steps are 1-based.
double lr_at(long step, double peak, long warmup, long total);

/// Decoupled weight decay (p ← p − lr·λ·p, skipped for Parameter::decay ==
/// false), then the bias-corrected Adam update. Moments are keyed by name.
class AdamW {
public:
    struct Moments {
        Matrix m, v;
    };

    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    void step(const std::vector<Parameter*>& params, double lr);

    long steps() const { return steps_; }
    void set_steps(long steps) { steps_ = steps; }
    const std::map<std::string, Moments>& moments() const { return moments_; }
    std::map<std::string, Moments>& moments() { return moments_; }
    const AdamWConfig& config() const { return config_; }

private:
    AdamWConfig config_;
    std::map<std::string, Moments> moments_;
    long steps_ = 0;
};

}  // namespace s2d::pag
