#include "lantern/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lantern/errors.hpp"

namespace lantern::ad {

bool GradCheckReport::ok() const {
  return std::none_of(entries.begin(), entries.end(),
                      [](const GradCheckEntry& e) { return e.flagged; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_err);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (ok() ? "PASS" : "FAIL") << " (eps=" << eps << ", tol=" << tol << ")";
  for (const auto& e : entries) {
    os << "\n  " << (e.flagged ? "FLAG " : "ok   ") << e.name << "  max_rel_err="
       << e.max_rel_err;
  }
  return os.str();
}

GradCheckReport grad_check(const Program& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps, double tol) {
  if (eps <= 0.0 || tol <= 0.0) {
    throw ValidationError("grad_check: eps and tol must be positive");
  }
  GradCheckReport report;
  report.eps = eps;
  report.tol = tol;

  for (const auto& [name, t] : params) {
    (void)name;
    t.zero_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);

  std::vector<std::vector<double>> g_ad;
  g_ad.reserve(params.size());
  for (const auto& [name, t] : params) {
    (void)name;
    auto g = t.grad();
    g_ad.emplace_back(g.begin(), g.end());
  }

  auto eval = [&]() {
    Tape probe(/*recording=*/false);
    return f(probe).item();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& t = params[pi].second;
    auto data = t.mutable_data();
    GradCheckEntry entry;
    entry.name = params[pi].first;
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double hi = eval();
      data[i] = orig - eps;
      const double lo = eval();
      data[i] = orig;
      const double g_fd = (hi - lo) / (2.0 * eps);
      const double g = g_ad[pi][static_cast<std::size_t>(i)];
      const double denom = std::max({std::fabs(g), std::fabs(g_fd), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(g - g_fd) / denom);
    }
    entry.flagged = entry.max_rel_err > tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lantern::ad
