#include "fedagg/sim/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "fedagg/errors.hpp"

namespace fedagg::sim {
namespace {

constexpr std::uint64_t kParticipationStream = 0x70617274;
constexpr std::uint64_t kBatchStream = 0x62617463;
constexpr std::uint64_t kTestStream = 0x74657374;
constexpr std::uint64_t kStateStream = 0x73746174;

// 64-bit FNV-1a over raw bytes.
class Digest {
 public:
  template <class T>
  void add(const T* data, std::size_t count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < count * sizeof(T); ++i) {
      h_ ^= bytes[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct World {
  TaskInstance task;
  std::map<PartyId, Samples> local;
  std::map<PartyId, const PartySpec*> spec;
  std::vector<PartyId> ids;  // ascending
  Samples test;
};

World build_world(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  World world{TaskInstance(config.task.model, seed), {}, {}, {}, {}};
  const Pool pool = make_pool(world.task, config.task.pool_size, seed);
  const auto layout =
      generate_overlapping_data(config.task.pool_size, config.parties, config.overlap, seed);
  for (const auto& p : config.parties) {
    world.spec[p.id] = &p;
    world.ids.push_back(p.id);
    if (p.genuine()) {
      world.local[p.id] =
          party_samples(world.task, pool, layout.at(p.id), p.noise_level.draw(seed, p.id));
    }
  }
  std::sort(world.ids.begin(), world.ids.end());
  auto rng = make_rng({seed, kTestStream});
  world.test = world.task.draw(config.task.test_size, rng);
  return world;
}

NoiseState make_state(const SimConfig& config, const World& world, std::uint64_t seed) {
  NoiseState state(config.window, mix_seed({seed, kStateStream}));
  // Adversaries claim the largest genuine sample size.
  double largest = 1.0;
  for (const auto& [id, data] : world.local) largest = std::max(largest, double(data.size()));
  for (PartyId id : world.ids) {
    const auto it = world.local.find(id);
    state.set_reported_size(id, it == world.local.end() ? largest : double(it->second.size()));
  }
  return state;
}

std::size_t adversary_batch(const TaskSpec& task) {
  if (const auto* mb = std::get_if<MiniBatch>(&task.batch)) return mb->size;
  return 32;
}

void fill_log(RoundLog& log, const UpdateMatrix& x, const AggregateResult& res) {
  log.participants = x.party_ids();
  for (Eigen::Index j = 0; j < x.num_parties(); ++j) log.update_norms.push_back(x.column(j).norm());
  if (res.weights) log.weights.assign(res.weights->begin(), res.weights->end());
}

class Stopwatch {
 public:
  explicit Stopwatch(bool on) : on_(on), start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    if (!on_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  bool on_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

double LearningRate::at(std::size_t t) const noexcept {
  if (kind == Kind::InverseT) return eta / static_cast<double>(std::max<std::size_t>(t, 1));
  return eta;
}

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidInputError("simulation config: " + what); };
  if (parties.empty()) fail("no parties");
  std::set<PartyId> ids;
  std::size_t genuine = 0;
  std::size_t smallest = SIZE_MAX;
  for (const auto& p : parties) {
    if (!ids.insert(p.id).second) fail("duplicate party " + to_string(p.id));
    if (const auto* g = std::get_if<Genuine>(&p.behavior)) {
      ++genuine;
      if (g->sample_size < 1) fail("party " + to_string(p.id) + " has sample_size 0");
      smallest = std::min(smallest, g->sample_size);
    } else {
      const double scale = std::visit(
          [](const auto& b) {
            if constexpr (std::is_same_v<std::decay_t<decltype(b)>, Genuine>) {
              return 1.0;
            } else {
              return b.scale;
            }
          },
          p.behavior);
      if (!(scale > 0.0) || !std::isfinite(scale)) {
        fail("party " + to_string(p.id) + " needs a positive adversary scale");
      }
    }
    const auto& nl = p.noise_level;
    if (nl.log_uniform) {
      if (!(nl.log_uniform->first > 0.0) || !(nl.log_uniform->second >= nl.log_uniform->first)) {
        fail("party " + to_string(p.id) + " log-uniform noise range must satisfy 0 < lo <= hi");
      }
    } else if (!(nl.value >= 0.0) || !std::isfinite(nl.value)) {
      fail("party " + to_string(p.id) + " noise level must be >= 0");
    }
  }
  if (genuine == 0) fail("at least one genuine party is required");

  if (const auto* lin = std::get_if<LinearRegression>(&task.model)) {
    if (lin->dim < 1) fail("dim must be >= 1");
    if (!(lin->label_noise >= 0.0)) fail("label_noise must be >= 0");
  } else {
    const auto& log = std::get<LogisticRegression>(task.model);
    if (log.dim < 1) fail("dim must be >= 1");
    if (log.classes < 2) fail("classes must be >= 2");
    if (!(log.label_flip_rate >= 0.0 && log.label_flip_rate <= 1.0)) {
      fail("label_flip_rate must lie in [0, 1]");
    }
    if (!(log.class_separation >= 0.0)) fail("class_separation must be >= 0");
  }
  if (const auto* mb = std::get_if<MiniBatch>(&task.batch)) {
    if (mb->size < 1) fail("mini-batch size must be >= 1");
    if (mb->size > smallest) fail("mini-batch size exceeds the smallest party sample");
  }
  if (task.rounds < 1) fail("rounds must be >= 1");
  if (!(task.learning_rate.eta > 0.0)) fail("learning rate must be > 0");
  if (task.test_size < 1) fail("test_size must be >= 1");
  if (task.local_fit.steps < 1 || !(task.local_fit.lr > 0.0) || !(task.local_fit.grad_tol >= 0.0)) {
    fail("local_fit needs steps >= 1, lr > 0 and grad_tol >= 0");
  }
  if (participation.k > parties.size()) fail("participation k exceeds the number of parties");
  if (window < 1) fail("window must be >= 1");
  expand_design(task.pool_size, parties, overlap);
}

std::vector<PartyId> sample_participants(const std::vector<PartyId>& parties,
                                         const Participation& rule, std::uint64_t seed,
                                         std::size_t round) {
  std::vector<PartyId> out(parties);
  std::sort(out.begin(), out.end());
  if (rule.k == 0 || rule.k >= out.size()) return out;
  auto rng = make_rng({seed, kParticipationStream, round});
  for (std::size_t i = 0; i < rule.k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, out.size() - 1);
    std::swap(out[i], out[pick(rng)]);
  }
  out.resize(rule.k);
  std::sort(out.begin(), out.end());
  return out;
}

RunResult run_one_round_estimation(const SimConfig& config, const AggregatorKind& aggregator,
                                   std::uint64_t seed) {
  const World world = build_world(config, seed);
  NoiseState state = make_state(config, world, seed);
  const Stopwatch clock(config.timing);
  const std::size_t k = num_params(config.task.model);
  constexpr std::size_t round = 1;

  RoundLog log;
  log.round = round;
  Digest digest;
  const auto parts = sample_participants(world.ids, config.participation, seed, round);
  digest.add(parts.data(), parts.size());

  Eigen::MatrixXd values(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(parts.size()));
  for (std::size_t j = 0; j < parts.size(); ++j) {
    const PartySpec& p = *world.spec.at(parts[j]);
    Eigen::VectorXd col;
    if (p.genuine()) {
      LocalFit fit = fit_local(config.task.model, world.local.at(p.id), config.task.local_fit);
      if (fit.diverged) log.diverged.push_back(p.id);
      col = std::move(fit.w);
    } else {
      col = adversary_update(p.behavior, world.task, k, seed, p.id, round,
                             adversary_batch(config.task));
    }
    digest.add(col.data(), static_cast<std::size_t>(col.size()));
    values.col(static_cast<Eigen::Index>(j)) = col;
  }

  RunResult out;
  try {
    const UpdateMatrix x(round, parts, std::move(values));
    const AggregateResult res = aggregate(aggregator, x, state);
    out.w = res.consensus;
    fill_log(log, x, res);
  } catch (const RuntimeAbort&) {
    throw;
  } catch (const Error& e) {
    throw RuntimeAbort("one-round estimation with " + aggregator.name() + ": " + e.what());
  }
  log.metric = test_metric(config.task.model, out.w, world.test);
  if (!std::isfinite(log.metric)) throw RuntimeAbort("one-round estimation: non-finite metric");
  log.draw_digest = digest.value();
  log.wallclock_ms = clock.elapsed_ms();
  out.final_metric = log.metric;
  out.logs.push_back(std::move(log));
  return out;
}

RunResult run_multi_round_sgd(const SimConfig& config, const AggregatorKind& aggregator,
                              std::uint64_t seed) {
  const World world = build_world(config, seed);
  NoiseState state = make_state(config, world, seed);
  const std::size_t k = num_params(config.task.model);

  RunResult out;
  out.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t t = 1; t <= config.task.rounds; ++t) {
    const Stopwatch clock(config.timing);
    if (config.reset_state) state.reset();
    RoundLog log;
    log.round = t;
    Digest digest;
    const auto parts = sample_participants(world.ids, config.participation, seed, t);
    digest.add(parts.data(), parts.size());

    try {
      Eigen::MatrixXd values(static_cast<Eigen::Index>(k),
                             static_cast<Eigen::Index>(parts.size()));
      for (std::size_t j = 0; j < parts.size(); ++j) {
        const PartySpec& p = *world.spec.at(parts[j]);
        if (p.genuine()) {
          auto rng = make_rng({seed, kBatchStream, to_index(p.id), t});
          std::vector<Eigen::Index> rows;
          values.col(static_cast<Eigen::Index>(j)) = genuine_update(
              config.task.model, world.local.at(p.id), out.w, config.task.batch, rng, &rows);
          digest.add(rows.data(), rows.size());
        } else {
          const Eigen::VectorXd a = adversary_update(p.behavior, world.task, k, seed, p.id, t,
                                                     adversary_batch(config.task));
          digest.add(a.data(), static_cast<std::size_t>(a.size()));
          values.col(static_cast<Eigen::Index>(j)) = a;
        }
      }
      const UpdateMatrix x(t, parts, std::move(values));
      const AggregateResult res = aggregate(aggregator, x, state);
      out.w -= config.task.learning_rate.at(t) * res.consensus;
      fill_log(log, x, res);
    } catch (const RuntimeAbort&) {
      throw;
    } catch (const Error& e) {
      throw RuntimeAbort("round " + std::to_string(t) + " with " + aggregator.name() + ": " +
                         e.what());
    }
    if (!out.w.allFinite()) {
      throw RuntimeAbort("round " + std::to_string(t) + " with " + aggregator.name() +
                         ": parameters are no longer finite");
    }
    log.metric = test_metric(config.task.model, out.w, world.test);
    log.draw_digest = digest.value();
    log.wallclock_ms = clock.elapsed_ms();
    out.logs.push_back(std::move(log));
  }
  out.final_metric = out.logs.back().metric;
  return out;
}

RunResult run_federation(const SimConfig& config, const AggregatorKind& aggregator,
                         std::uint64_t seed) {
  if (config.task.protocol == Protocol::OneRoundFit) {
    return run_one_round_estimation(config, aggregator, seed);
  }
  return run_multi_round_sgd(config, aggregator, seed);
}

}  // namespace fedagg::sim
