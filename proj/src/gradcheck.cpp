#include "eva/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace eva::ag {

FiniteDiffReport finite_diff_check(ParameterStore& store,
                                   const std::function<Value(Tape&)>& build_loss,
                                   double epsilon, double tolerance) {
    if (epsilon <= 0.0) throw std::invalid_argument("finite_diff_check: epsilon must be > 0");

    Gradients analytic;
    {
        Tape tape;
        Value loss = build_loss(tape);
        tape.backward(loss);
        analytic = tape.collect(store);
    }

    auto eval = [&]() {
        Tape tape;
        tape.set_grad_enabled(false);
        return build_loss(tape).scalar();
    };

    FiniteDiffReport report;
    report.tolerance = tolerance;
    for (auto& p : store) {
        if (!p.trainable) continue;
        Tensor g = analytic.get(p.name, p.value.shape);
        FiniteDiffEntry entry{p.name, 0.0, 0};
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            double saved = p.value.data[i];
            p.value.data[i] = saved + epsilon;
            double up = eval();
            p.value.data[i] = saved - epsilon;
            double down = eval();
            p.value.data[i] = saved;
            double fd = (up - down) / (2.0 * epsilon);
            double denom = std::max(std::abs(g.data[i]), std::abs(fd));
            double rel = denom < 1e-10 ? 0.0 : std::abs(g.data[i] - fd) / std::max(denom, 1e-8);
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
        }
        if (entry.max_rel_err > report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_param = entry.param;
        }
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace eva::ag
