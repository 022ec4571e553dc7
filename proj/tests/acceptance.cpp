// Acceptance checks: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails. Criterion numbers on the command line select a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedagg/baselines.hpp"
#include "fedagg/errors.hpp"
#include "fedagg/harness/config.hpp"
#include "fedagg/harness/reports.hpp"
#include "fedagg/harness/suite.hpp"
#include "fedagg/icov.hpp"
#include "fedagg/ivar.hpp"
#include "fedagg/rng.hpp"

using namespace fedagg;
using namespace fedagg::harness;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<PartyId> ids(std::size_t n) {
  std::vector<PartyId> out;
  for (std::size_t j = 0; j < n; ++j) out.push_back(PartyId{static_cast<std::uint32_t>(j)});
  return out;
}

Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index a = 0; a < r; ++a)
    for (Eigen::Index b = 0; b < c; ++b) m(a, b) = n(rng);
  return m;
}

// Rounds with N(0, 1) truth, per-party noise variances, and an optional
// shared offset for a block of parties.
std::vector<UpdateMatrix> instance(const std::vector<double>& sigma_sq, std::size_t rounds,
                                   Eigen::Index k, std::size_t colluders, Rng& rng) {
  std::normal_distribution<double> n;
  std::vector<UpdateMatrix> out;
  const auto j_count = static_cast<Eigen::Index>(sigma_sq.size());
  for (std::size_t i = 0; i < rounds; ++i) {
    const Eigen::MatrixXd truth = gaussian(k, 1, rng);
    const Eigen::MatrixXd offset = gaussian(k, 1, rng, 2.0);
    Eigen::MatrixXd x(k, j_count);
    for (Eigen::Index j = 0; j < j_count; ++j) {
      const bool colluding = j >= j_count - static_cast<Eigen::Index>(colluders);
      for (Eigen::Index r = 0; r < k; ++r) {
        x(r, j) = truth(r, 0) + std::sqrt(sigma_sq[std::size_t(j)]) * n(rng) +
                  (colluding ? offset(r, 0) : 0.0);
      }
    }
    out.emplace_back(i, ids(sigma_sq.size()), x);
  }
  return out;
}

std::map<std::string, std::map<std::uint64_t, double>> by_label(const ExperimentSummary& s) {
  std::map<std::string, std::map<std::uint64_t, double>> out;
  for (const auto& r : s.runs) {
    if (!r.aborted) out[r.aggregator][r.seed] = r.final_metric;
  }
  return out;
}

double mean_of(const std::map<std::uint64_t, double>& m) {
  double acc = 0;
  for (const auto& [seed, v] : m) acc += v;
  return m.empty() ? NAN : acc / double(m.size());
}

// Seeds (among those where both completed) in which a beats b.
int wins(const std::map<std::uint64_t, double>& a, const std::map<std::uint64_t, double>& b,
         bool higher_better) {
  int n = 0;
  for (const auto& [seed, va] : a) {
    auto it = b.find(seed);
    if (it == b.end()) continue;
    if (higher_better ? va > it->second : va < it->second) ++n;
  }
  return n;
}

ExperimentSummary run_config(const std::string& file, unsigned jobs = 1) {
  const auto config = load_config(std::string(FEDAGG_CONFIG_DIR) + "/" + file);
  SuiteOptions options;
  options.jobs = jobs;
  return run_suite(config, config.aggregators, options);
}

// ---- 1 ---------------------------------------------------------------------
Outcome gradients() {
  auto rng = make_rng({1, 1});
  std::uniform_int_distribution<int> pick_j(2, 6), pick_d(1, 3);
  std::uniform_real_distribution<double> pick_var(0.2, 2.0);
  const double h = 1e-5;
  double worst = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int j = pick_j(rng), d = pick_d(rng);
    const Eigen::MatrixXd res = gaussian(1, j, rng);
    const Eigen::MatrixXd v = gaussian(j, d, rng);
    const double su = pick_var(rng), s = pick_var(rng);
    const auto obj = latent_round_objective(res, v, su, s);
    auto rel = [](double a, double fd) { return std::abs(a - fd) / std::max(1.0, std::abs(fd)); };
    auto value = [&](const Eigen::MatrixXd& vv, double a, double b) {
      return latent_round_objective(res, vv, a, b).value;
    };
    for (int a = 0; a < j; ++a) {
      for (int b = 0; b < d; ++b) {
        Eigen::MatrixXd up = v, dn = v;
        up(a, b) += h;
        dn(a, b) -= h;
        worst = std::max(worst, rel(obj.grad_v(a, b), (value(up, su, s) - value(dn, su, s)) / (2 * h)));
      }
    }
    worst = std::max(worst, rel(obj.grad_sigma_sq, (value(v, su, s + h) - value(v, su, s - h)) / (2 * h)));
    worst = std::max(worst, rel(obj.grad_sigma_u_sq, (value(v, su + h, s) - value(v, su - h, s)) / (2 * h)));
  }
  return {worst < 1e-5, fmt("20 instances, worst relative error %.2e", worst)};
}

// ---- 2 ---------------------------------------------------------------------
Outcome free_energy() {
  auto rng = make_rng({2, 2});
  std::uniform_int_distribution<int> pick_j(3, 8), pick_d(1, 3);
  std::uniform_real_distribution<double> pick_var(0.1, 4.0);
  double worst_ivar = 0, worst_icov = 0;
  std::size_t passes = 0;
  for (int inst = 0; inst < 10; ++inst) {
    const int j = pick_j(rng);
    std::vector<double> s(static_cast<std::size_t>(j));
    for (auto& v : s) v = pick_var(rng);
    const auto rounds = instance(s, 5, 8, std::size_t(j / 3), rng);

    IvarVbState a;
    IvarVbOptions ao;
    ao.max_iter = 50;
    ao.tol = 1e-300;
    const auto ra = ivar_vb_aggregate(rounds, a, ao);
    for (std::size_t t = 1; t < ra[0].objective_trace.size(); ++t) {
      worst_ivar = std::min(worst_ivar, ra[0].objective_trace[t] - ra[0].objective_trace[t - 1]);
    }

    IcovVbState b;
    b.latent_dim = std::size_t(pick_d(rng));
    b.seed = std::uint64_t(inst);
    IcovVbOptions bo;
    bo.max_iter = 50;
    bo.tol = 1e-300;
    const auto rb = icov_vb_aggregate(rounds, b, bo);
    for (std::size_t t = 1; t < rb[0].objective_trace.size(); ++t) {
      worst_icov = std::min(worst_icov, rb[0].objective_trace[t] - rb[0].objective_trace[t - 1]);
    }
    passes += ra[0].objective_trace.size() + rb[0].objective_trace.size();
  }
  const bool ok = worst_ivar >= -1e-9 && worst_icov >= -1e-9;
  return {ok, fmt("%zu passes, largest drop: independent %.2e, latent %.2e", passes, -worst_ivar,
                  -worst_icov)};
}

// ---- 3 ---------------------------------------------------------------------
Outcome overlap() {
  auto rng = make_rng({3, 3});
  std::normal_distribution<double> n;
  const int draws = 100000;
  // Party 0 averages samples 0..3, party 1 samples 2..7.
  std::vector<double> prod(draws);
  double m0s = 0, m1s = 0;
  std::vector<double> m0(draws), m1(draws);
  for (int t = 0; t < draws; ++t) {
    double e[8];
    for (double& v : e) v = n(rng);
    m0[t] = (e[0] + e[1] + e[2] + e[3]) / 4.0;
    m1[t] = (e[2] + e[3] + e[4] + e[5] + e[6] + e[7]) / 6.0;
    m0s += m0[t];
    m1s += m1[t];
  }
  m0s /= draws;
  m1s /= draws;
  double cov = 0;
  for (int t = 0; t < draws; ++t) {
    prod[t] = (m0[t] - m0s) * (m1[t] - m1s);
    cov += prod[t];
  }
  cov /= draws - 1;
  double var = 0;
  for (double p : prod) var += (p - cov) * (p - cov);
  const double se = std::sqrt(var / (draws - 1) / draws);
  const double expected = overlap_phi(OverlapSpec{{4, 6}, Eigen::Matrix2d{{4, 2}, {2, 6}}, 1.0}).phi(0, 1);
  const double z = (cov - expected) / se;
  return {std::abs(z) <= 3.0 && std::abs(expected - 1.0 / 12.0) < 1e-15,
          fmt("empirical %.5f vs %.5f, %.2f standard errors", cov, expected, z)};
}

// ---- 4 ---------------------------------------------------------------------
Outcome reductions() {
  auto rng = make_rng({4, 4});
  std::string detail;
  bool ok = true;

  // (a) symmetric spread: every party is equally far from the mean.
  double err_a = 0;
  for (int t = 0; t < 10; ++t) {
    const Eigen::VectorXd c = gaussian(6, 1, rng);
    const Eigen::VectorXd e = gaussian(6, 1, rng);
    Eigen::VectorXd f = gaussian(6, 1, rng);
    f *= e.norm() / f.norm();
    Eigen::MatrixXd x(6, 4);
    x << c + e, c - e, c + f, c - f;
    VarianceTable state;
    const auto r = ivar_mle_aggregate(std::vector{UpdateMatrix(0, ids(4), x)}, state);
    err_a = std::max(err_a, (r[0].consensus - x.rowwise().mean()).cwiseAbs().maxCoeff());
  }
  ok = ok && err_a < 1e-10;
  detail += fmt("(a) %.1e", err_a);

  // (b) diagonal covariance against inverse-variance weights.
  double err_b = 0;
  for (int t = 0; t < 10; ++t) {
    const UpdateMatrix x(0, ids(5), gaussian(7, 5, rng));
    VarianceTable table;
    Eigen::VectorXd s(5);
    for (int j = 0; j < 5; ++j) {
      s[j] = 0.1 + std::abs(gaussian(1, 1, rng)(0, 0));
      table[PartyId{std::uint32_t(j)}].sigma_sq = s[j];
    }
    const auto w = ivar_weights(table, x.party_ids());
    const auto ivar = weighted_average(x, w);
    const auto gls = mle_consensus_given_phi(x, Eigen::MatrixXd(s.asDiagonal()));
    err_b = std::max(err_b, (ivar.consensus - gls.consensus).cwiseAbs().maxCoeff());
  }
  ok = ok && err_b < 1e-12;
  detail += fmt(", (b) %.1e", err_b);

  // (c) latent VB with the latent term switched off.
  double err_c = 0;
  for (int t = 0; t < 5; ++t) {
    const auto rounds = instance({0.5, 1.0, 2.0, 3.0}, 6, 4, 0, rng);
    IcovVbState latent;
    latent.latent_dim = 1;
    latent.sigma_v_sq = 1e-14;
    for (auto id : ids(4)) {
      latent.parties[id] = LatentParty{Eigen::VectorXd::Zero(1), 1e-14 * Eigen::MatrixXd::Identity(1, 1), 1.0};
    }
    IcovVbOptions lo;
    // Same number of passes on both sides; the stopping rules differ.
    lo.max_iter = 500;
    lo.tol = 1e-300;
    lo.pin_sigma_v = true;
    const auto a = icov_vb_aggregate(rounds, latent, lo);
    IvarVbState plain;
    IvarVbOptions po;
    po.max_iter = 500;
    po.tol = 1e-300;
    const auto b = ivar_vb_aggregate(rounds, plain, po);
    for (std::size_t i = 0; i < rounds.size(); ++i) {
      err_c = std::max(err_c, (a[i].consensus - b[i].consensus).cwiseAbs().maxCoeff());
    }
  }
  ok = ok && err_c < 1e-6;
  detail += fmt(", (c) %.1e", err_c);

  // (d) variances inversely proportional to sample size.
  double err_d = 0;
  for (int t = 0; t < 10; ++t) {
    const UpdateMatrix x(0, ids(4), gaussian(5, 4, rng));
    const std::vector<double> sizes{30, 120, 75, 300};
    VarianceTable table;
    for (int j = 0; j < 4; ++j) table[PartyId{std::uint32_t(j)}].sigma_sq = 2.5 / sizes[std::size_t(j)];
    const auto a = weighted_average(x, ivar_weights(table, x.party_ids()));
    const auto b = weighted_average(x, sizes);
    err_d = std::max(err_d, (a.consensus - b.consensus).cwiseAbs().maxCoeff());
  }
  ok = ok && err_d < 1e-12;
  detail += fmt(", (d) %.1e", err_d);
  return {ok, detail};
}

// ---- 5 ---------------------------------------------------------------------
Outcome synthetic_ordering(const ExperimentSummary& s) {
  const auto m = by_label(s);
  // Each pair (a, b) means a should have the lower test MSE.
  const std::vector<std::pair<std::string, std::string>> pairs{
      {"icov_vb", "ivar_vb"},      {"icov_vb", "ivar_mle"},      {"icov_vb", "coord_median"},
      {"icov_vb", "geom_median"},  {"icov_vb", "uniform"},       {"ivar_vb", "coord_median"},
      {"ivar_mle", "coord_median"}, {"ivar_vb", "geom_median"},  {"ivar_mle", "geom_median"},
      {"ivar_vb", "uniform"},      {"ivar_mle", "uniform"},      {"coord_median", "geom_median"},
      {"coord_median", "uniform"}, {"geom_median", "uniform"}};
  bool ok = true;
  std::string detail = "means";
  for (const char* label : {"icov_vb", "ivar_vb", "ivar_mle", "coord_median", "geom_median", "uniform"}) {
    detail += fmt(" %s=%.3f", label, mean_of(m.count(label) ? m.at(label) : std::map<std::uint64_t, double>{}));
  }
  detail += "; seeds holding:";
  for (const auto& [a, b] : pairs) {
    const int n = (m.count(a) && m.count(b)) ? wins(m.at(a), m.at(b), false) : 0;
    ok = ok && n >= 7;
    detail += fmt(" %s<%s %d/10", a.c_str(), b.c_str(), n);
  }
  return {ok, detail};
}

// ---- 6 ---------------------------------------------------------------------
Outcome classification(const ExperimentSummary& s) {
  const auto m = by_label(s);
  const double uniform = mean_of(m.at("uniform"));
  bool ok = true;
  std::string detail = fmt("uniform %.3f", uniform);
  for (const char* label : {"ivar_mle", "icov_vb"}) {
    const double acc = mean_of(m.at(label));
    const int beat = wins(m.at(label), m.at("coord_median"), true);
    ok = ok && acc >= uniform + 0.15 && beat >= 7;
    detail += fmt("; %s %.3f (%+.3f), beats coord_median %d/10", label, acc, acc - uniform, beat);
  }
  return {ok, detail};
}

// ---- 7 ---------------------------------------------------------------------
Outcome no_adversary(const ExperimentSummary& s) {
  const auto m = by_label(s);
  std::string best;
  double best_mse = INFINITY;
  for (const auto& [label, runs] : m) {
    const double v = mean_of(runs);
    if (v < best_mse) {
      best_mse = v;
      best = label;
    }
  }
  const double uniform = mean_of(m.at("uniform"));
  return {uniform <= 1.02 * best_mse,
          fmt("uniform %.4f, best %s %.4f, ratio %.4f", uniform, best.c_str(), best_mse,
              uniform / best_mse)};
}

// ---- 8 ---------------------------------------------------------------------
Outcome bounded_influence() {
  auto rng = make_rng({8, 8});
  const Eigen::Index k = 20;
  const int honest = 5;
  const Eigen::VectorXd truth = gaussian(k, 1, rng);
  Eigen::MatrixXd base(k, honest + 1);
  for (int j = 0; j < honest; ++j) base.col(j) = truth + gaussian(k, 1, rng);
  const Eigen::VectorXd attack = gaussian(k, 1, rng);
  const Eigen::VectorXd honest_mean = base.leftCols(honest).rowwise().mean();
  double spread = 0;
  for (int j = 0; j < honest; ++j) spread += (base.col(j) - honest_mean).squaredNorm();
  spread = std::sqrt(spread / honest);

  std::vector<Eigen::VectorXd> consensus;
  for (double factor : {1.0, 10.0, 100.0, 1000.0}) {
    Eigen::MatrixXd x = base;
    x.col(honest) = factor * attack;
    VarianceTable state;
    IvarMleOptions opt;
    opt.max_iter = 1000;
    opt.tol = 1e-12;
    consensus.push_back(ivar_mle_aggregate(std::vector{UpdateMatrix(0, ids(honest + 1), x)}, state, opt)[0].consensus);
  }
  std::vector<double> moves;
  for (std::size_t i = 1; i < consensus.size(); ++i) moves.push_back((consensus[i] - consensus[i - 1]).norm());
  const bool decreasing = moves[1] < moves[0] && moves[2] < moves[1];
  const double offset = (consensus.back() - honest_mean).norm();
  return {decreasing && offset <= 2.0 * spread,
          fmt("moves per decade %.3g, %.3g, %.3g; at 1000x %.3f from the honest mean (2x spread %.3f)",
              moves[0], moves[1], moves[2], offset, 2.0 * spread)};
}

// ---- 9 ---------------------------------------------------------------------
Outcome determinism(const ExperimentSummary& first) {
  const auto second = run_config("synthetic.json", 2);
  const bool same = curves_csv(first) == curves_csv(second) && runs_csv(first) == runs_csv(second) &&
                    summary_csv(first.table) == summary_csv(second.table) &&
                    summary_json(first) == summary_json(second);
  return {same, fmt("synthetic suite with 1 and 2 workers: %s", same ? "byte-identical" : "outputs differ")};
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  int failures = 0;
  int ran = 0;
  auto report = [&](int id, double limit_s, const std::function<Outcome()>& check) {
    if (!wanted(id)) return;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit_s > 0 && secs > limit_s) {
      o.pass = false;
      o.detail += fmt(" [over the %.0f s limit]", limit_s);
    }
    if (!o.pass) ++failures;
    std::printf("criterion %d: %s  %s (%.1f s)\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report(1, 10, gradients);
  report(2, 30, free_energy);
  report(3, 30, overlap);
  report(4, 0, reductions);

  ExperimentSummary synthetic;
  report(5, 300, [&] {
    synthetic = run_config("synthetic.json");
    return synthetic_ordering(synthetic);
  });
  report(6, 180, [] { return classification(run_config("logistic_one_round.json")); });
  report(7, 0, [] { return no_adversary(run_config("no_adversary.json")); });
  report(8, 0, bounded_influence);
  report(9, 0, [&] {
    if (synthetic.runs.empty()) synthetic = run_config("synthetic.json");
    return determinism(synthetic);
  });

  std::printf("%d of %d criteria failed\n", failures, ran);
  return failures == 0 ? 0 : 1;
}
