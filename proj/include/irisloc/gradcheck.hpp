#ifndef IRISLOC_GRADCHECK_HPP
#define IRISLOC_GRADCHECK_HPP

// Central finite differences against the reverse-mode gradients, all in
// double precision.
//
// Per coordinate: rel = |analytic - numeric| / max(|analytic|, |numeric|, floor).
// For composite networks a perturbation of +-h may flip a ReLU sign or a
// max-pool winner somewhere downstream, and the difference quotient then
// spans a kink. Such coordinates are detected exactly, by comparing the
// activation pattern (ReLU input signs, max-pool window winners) at x-h, x and
// x+h, and skipped; the skipped share must stay under max_skip_fraction.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "irisloc/graph.hpp"
#include "irisloc/losses.hpp"
#include "irisloc/models.hpp"
#include "irisloc/ops.hpp"
#include "irisloc/rng.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 10;
  double step = 1e-3;
  double tolerance = 1e-4;
  double floor = 1e-3;
  double max_skip_fraction = 0.05;
  // Fault injection for testing the harness: perturb one analytic gradient
  // entry of the named case ("*" for every case).
  std::string fault_case;
};

struct CaseOutcome {
  std::string name;
  std::size_t seeds = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double worst = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<CaseOutcome> cases;
  double seconds = 0;

  bool passed() const {
    return std::all_of(cases.begin(), cases.end(), [](const CaseOutcome& c) { return c.passed; });
  }
};

namespace gradcheck {

using Fn = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct Problem {
  // Graph leaves passed to fn (bound as parameters when tracking).
  std::vector<Tensor<double>> leaves;
  // Tensors that fn binds by itself (network parameters). Checked too.
  std::vector<Tensor<double>*> bound;
  Fn fn;
  bool allow_kinks = false;
};

struct Tally {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double worst = 0;
};

/// ReLU input signs and max-pool window winners of every such node in g.
inline std::vector<std::uint8_t> activation_pattern(const Graph<double>& g) {
  std::vector<std::uint8_t> out;
  for (std::size_t id = 0; id < g.size(); ++id) {
    const auto kind = g.kind(id);
    if (kind != "relu" && kind != "maxpool2") continue;
    const auto& x = g.value(g.inputs(id)[0]);
    if (kind == "relu") {
      for (double v : x.data()) out.push_back(v > 0.0);
      continue;
    }
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    for (std::size_t p = 0; p < planes; ++p) {
      const double* plane = x.data().data() + p * h * w;
      for (std::size_t r = 0; r + 1 < h; r += 2) {
        for (std::size_t c = 0; c + 1 < w; c += 2) {
          const double v[4] = {plane[r * w + c], plane[r * w + c + 1], plane[(r + 1) * w + c],
                               plane[(r + 1) * w + c + 1]};
          std::uint8_t best = 0;
          for (std::uint8_t k = 1; k < 4; ++k) {
            if (v[k] > v[best]) best = k;
          }
          out.push_back(best);
        }
      }
    }
  }
  return out;
}

inline double evaluate(Problem& p, std::vector<std::uint8_t>* pattern = nullptr) {
  Graph<double> g(false);
  std::vector<Var<double>> vars;
  for (auto& t : p.leaves) vars.push_back(g.constant(t));
  const double v = p.fn(g, vars).value()[0];
  if (pattern) *pattern = activation_pattern(g);
  return v;
}

inline Tally check(Problem& p, const GradcheckOptions& opts, bool inject_fault) {
  std::vector<Tensor<double>*> targets;
  for (auto& t : p.leaves) targets.push_back(&t);
  for (auto* t : p.bound) targets.push_back(t);
  for (auto* t : targets) t->zero_grad();

  {
    Graph<double> g;
    std::vector<Var<double>> vars;
    for (auto& t : p.leaves) vars.push_back(g.parameter(t));
    g.backward(p.fn(g, vars));
  }
  std::vector<std::vector<double>> analytic;
  for (auto* t : targets) analytic.emplace_back(t->grad().begin(), t->grad().end());
  if (inject_fault) analytic[0][0] += 1e-2 * std::max(1.0, std::abs(analytic[0][0]));

  const double h = opts.step;
  std::vector<std::uint8_t> base, plus, minus;
  if (p.allow_kinks) evaluate(p, &base);
  auto* plus_ptr = p.allow_kinks ? &plus : nullptr;
  auto* minus_ptr = p.allow_kinks ? &minus : nullptr;
  Tally tally;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto values = targets[k]->data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double x = values[i];
      values[i] = x + h;
      const double fp = evaluate(p, plus_ptr);
      values[i] = x - h;
      const double fm = evaluate(p, minus_ptr);
      values[i] = x;
      ++tally.checked;
      if (p.allow_kinks && (plus != base || minus != base)) {
        ++tally.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      const double diff = std::abs(a - numeric);
      const double rel = diff / std::max({std::abs(a), std::abs(numeric), opts.floor});
      tally.worst = std::max(tally.worst, rel);
    }
  }
  return tally;
}

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform values whose magnitude is at least `gap`, keeping ReLU inputs away
/// from the kink.
inline Tensor<double> away_from_zero(Rng& rng, Shape shape, double gap) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

/// Distinct values spaced 0.05 apart in random order, so every 2x2 window has
/// a clear maximum.
inline Tensor<double> distinct_values(Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0 + 0.05 * static_cast<double>(i);
  rng.shuffle(v.begin(), v.end());
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

inline Tensor<double> random_mask(Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return t;
}

/// Signed distance maps for each [n,0] plane of a binary tensor.
inline Tensor<double> sdm_of(const Tensor<double>& mask) {
  const std::size_t n = mask.dim(0), h = mask.dim(2), w = mask.dim(3);
  Tensor<double> out(mask.shape());
  for (std::size_t b = 0; b < n; ++b) {
    BinaryMask m(h, w);
    for (std::size_t i = 0; i < h * w; ++i) m.values[i] = mask[b * h * w + i] > 0.5 ? 1 : 0;
    const auto s = signed_distance_map(m);
    for (std::size_t i = 0; i < h * w; ++i) out[b * h * w + i] = s.values[i];
  }
  return out;
}

/// Reduce a tensor-valued op to a scalar with fixed random weights.
inline Fn reduced(Tensor<double> weights, std::function<Var<double>(const std::vector<Var<double>>&)> op) {
  return [weights = std::move(weights), op = std::move(op)](Graph<double>&, const std::vector<Var<double>>& v) {
    return weighted_sum(op(v), weights);
  };
}

struct Case {
  std::string name;
  // Builds the problem for one seed. `keep` owns any network the problem
  // refers to.
  std::function<Problem(Rng&, std::shared_ptr<void>& keep)> make;
};

inline ModelConfig tiny_config(Variant v) {
  ModelConfig cfg = v == Variant::UNetCoord ? ModelConfig::unet_coord(8, 8) : ModelConfig::u2net_lite(8, 8);
  cfg.base_channels = 2;
  cfg.depth = 2;
  return cfg;
}

inline Case network_case(const std::string& name, Variant variant) {
  return {name, [variant](Rng& rng, std::shared_ptr<void>& keep) {
            auto net = std::make_shared<Network<double>>(build_network<double>(tiny_config(variant), rng.next()));
            keep = net;
            // Non-zero biases so that dead ReLUs do not leave exact max-pool
            // ties; halved weights keep third derivatives, and with them the
            // truncation error of the central difference, small. Weights that
            // start at zero (output head, residual projections) get random
            // values so that every path carries gradient.
            for (auto& named : net->parameters()) {
              auto values = named.tensor.data();
              const bool bias = named.name.ends_with(".bias");
              const bool zero = std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
              for (auto& v : values) v = bias ? rng.uniform(-0.1, 0.1) : zero ? rng.uniform(-0.3, 0.3) : 0.5 * v;
            }
            Problem p;
            p.leaves.push_back(random_tensor(rng, {1, 1, 8, 8}, 0.0, 1.0));
            p.bound = net->parameter_pointers();
            auto w = random_tensor(rng, {1, 1, 8, 8});
            p.fn = [net, w](Graph<double>&, const std::vector<Var<double>>& v) {
              return weighted_sum(net->forward(*v[0].graph, v[0]), w);
            };
            p.allow_kinks = true;
            return p;
          }};
}

inline std::vector<Case> standard_cases() {
  std::vector<Case> cases;
  const auto conv_case = [](std::string name, std::size_t stride, std::size_t padding, std::size_t out) {
    return Case{name, [=](Rng& rng, std::shared_ptr<void>&) {
                  Problem p;
                  p.leaves = {random_tensor(rng, {2, 2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}),
                              random_tensor(rng, {3})};
                  p.fn = reduced(random_tensor(rng, {2, 3, out, out}), [=](const std::vector<Var<double>>& v) {
                    return conv2d(v[0], v[1], v[2], stride, padding);
                  });
                  return p;
                }};
  };
  cases.push_back(conv_case("conv2d", 1, 1, 5));
  cases.push_back(conv_case("conv2d-stride2", 2, 1, 3));
  cases.push_back(conv_case("conv2d-valid", 1, 0, 3));
  cases.push_back({"maxpool2", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {distinct_values(rng, {2, 2, 4, 4})};
                     p.fn = reduced(random_tensor(rng, {2, 2, 2, 2}),
                                    [](const std::vector<Var<double>>& v) { return maxpool2(v[0]); });
                     return p;
                   }});
  cases.push_back({"upsample_nearest2", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 2, 3, 3})};
                     p.fn = reduced(random_tensor(rng, {2, 2, 6, 6}),
                                    [](const std::vector<Var<double>>& v) { return upsample_nearest2(v[0]); });
                     return p;
                   }});
  cases.push_back({"relu", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {away_from_zero(rng, {2, 2, 4, 4}, 0.05)};
                     p.fn = reduced(random_tensor(rng, {2, 2, 4, 4}),
                                    [](const std::vector<Var<double>>& v) { return relu(v[0]); });
                     return p;
                   }});
  cases.push_back({"sigmoid", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 2, 4, 4}, -4.0, 4.0)};
                     p.fn = reduced(random_tensor(rng, {2, 2, 4, 4}),
                                    [](const std::vector<Var<double>>& v) { return sigmoid(v[0]); });
                     return p;
                   }});
  cases.push_back({"concat_channels", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 2, 3, 3}), random_tensor(rng, {2, 3, 3, 3})};
                     p.fn = reduced(random_tensor(rng, {2, 5, 3, 3}), [](const std::vector<Var<double>>& v) {
                       return concat_channels(v[0], v[1]);
                     });
                     return p;
                   }});
  cases.push_back({"coord_augment", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 1, 4, 5})};
                     p.fn = reduced(random_tensor(rng, {2, 3, 4, 5}),
                                    [](const std::vector<Var<double>>& v) { return coord_augment(v[0]); });
                     return p;
                   }});
  cases.push_back({"add", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 2, 3, 3}), random_tensor(rng, {2, 2, 3, 3})};
                     const double scale = rng.uniform(-2.0, 2.0);
                     p.fn = reduced(random_tensor(rng, {2, 2, 3, 3}), [scale](const std::vector<Var<double>>& v) {
                       return add(v[0], v[1], scale);
                     });
                     return p;
                   }});
  cases.push_back({"weighted_sum", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 2, 3, 3})};
                     p.fn = reduced(random_tensor(rng, {2, 2, 3, 3}),
                                    [](const std::vector<Var<double>>& v) { return v[0]; });
                     return p;
                   }});
  cases.push_back({"dice_loss", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 1, 6, 6}, 0.05, 0.95)};
                     auto gt = random_mask(rng, {2, 1, 6, 6});
                     p.fn = [gt](Graph<double>&, const std::vector<Var<double>>& v) { return dice_loss(v[0], gt); };
                     return p;
                   }});
  cases.push_back({"boundary_loss", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 1, 6, 6}, 0.05, 0.95)};
                     auto sdm = sdm_of(random_mask(rng, {2, 1, 6, 6}));
                     p.fn = [sdm](Graph<double>&, const std::vector<Var<double>>& v) {
                       return boundary_loss(v[0], sdm);
                     };
                     return p;
                   }});
  cases.push_back({"total_seg_loss", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 1, 6, 6}, 0.05, 0.95)};
                     auto gt = random_mask(rng, {2, 1, 6, 6});
                     auto sdm = sdm_of(gt);
                     const double lambda = rng.uniform(0.0, 2.0);
                     p.fn = [gt, sdm, lambda](Graph<double>&, const std::vector<Var<double>>& v) {
                       return total_seg_loss(v[0], gt, sdm, lambda);
                     };
                     return p;
                   }});
  cases.push_back({"mse_loss", [](Rng& rng, std::shared_ptr<void>&) {
                     Problem p;
                     p.leaves = {random_tensor(rng, {2, 1, 6, 6})};
                     auto target = random_tensor(rng, {2, 1, 6, 6}, 0.0, 1.0);
                     p.fn = [target](Graph<double>&, const std::vector<Var<double>>& v) {
                       return mse_loss(v[0], target);
                     };
                     return p;
                   }});
  cases.push_back(network_case("unet-coord", Variant::UNetCoord));
  cases.push_back(network_case("u2net-lite", Variant::U2NetLite));
  return cases;
}

inline CaseOutcome run_case(const Case& c, std::size_t case_index, const GradcheckOptions& opts) {
  CaseOutcome out{c.name, opts.seeds, 0, 0, 0.0, false};
  const bool fault = opts.fault_case == "*" || opts.fault_case == c.name;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    Rng rng(derive_seed(derive_seed(opts.seed, case_index), s));
    std::shared_ptr<void> keep;
    auto problem = c.make(rng, keep);
    const auto t = check(problem, opts, fault);
    out.checked += t.checked;
    out.skipped += t.skipped;
    out.worst = std::max(out.worst, t.worst);
  }
  const double skip_share = out.checked ? static_cast<double>(out.skipped) / static_cast<double>(out.checked) : 0.0;
  out.passed = out.worst < opts.tolerance && skip_share <= opts.max_skip_fraction;
  return out;
}

}  // namespace gradcheck

inline GradcheckReport run_gradcheck(const GradcheckOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  const auto cases = gradcheck::standard_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) report.cases.push_back(gradcheck::run_case(cases[i], i, opts));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace irisloc

#endif  // IRISLOC_GRADCHECK_HPP
