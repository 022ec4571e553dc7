#include "fedagg/sim/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fedagg/errors.hpp"

namespace fedagg::sim {
namespace {

// Stream tags; any fixed distinct constants would do.
constexpr std::uint64_t kNoiseLevelStream = 0x6e6f6973;
constexpr std::uint64_t kTruthStream = 0x74727574;
constexpr std::uint64_t kLayoutStream = 0x6c61796f;
constexpr std::uint64_t kPoolStream = 0x706f6f6c;

Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

double NoiseLevel::draw(std::uint64_t seed, PartyId id) const {
  if (!log_uniform) return value;
  auto rng = make_rng({seed, kNoiseLevelStream, to_index(id)});
  std::uniform_real_distribution<double> u(std::log(log_uniform->first),
                                           std::log(log_uniform->second));
  return std::exp(u(rng));
}

std::size_t num_params(const ModelSpec& model) {
  if (const auto* lin = std::get_if<LinearRegression>(&model)) return lin->dim;
  const auto& log = std::get<LogisticRegression>(model);
  return log.classes * log.dim + log.classes;
}

TaskInstance::TaskInstance(const ModelSpec& model, std::uint64_t seed) : model_(model) {
  auto rng = make_rng({seed, kTruthStream});
  if (const auto* lin = std::get_if<LinearRegression>(&model_)) {
    const auto d = static_cast<Eigen::Index>(lin->dim);
    if (d < 1) throw InvalidInputError("linear regression: dim must be >= 1");
    true_w_ = lin->true_w ? *lin->true_w : standard_normal(d, rng);
    if (true_w_.size() != d) throw ShapeError("linear regression: true_w length differs from dim");
    if (lin->feature_cov) {
      Eigen::LLT<Eigen::MatrixXd> llt(*lin->feature_cov);
      if (lin->feature_cov->rows() != d || lin->feature_cov->cols() != d) {
        throw ShapeError("linear regression: feature_cov must be dim x dim");
      }
      if (llt.info() != Eigen::Success) {
        throw InvalidInputError("linear regression: feature_cov is not positive definite");
      }
      feature_chol_ = llt.matrixL();
    } else {
      feature_chol_ = Eigen::MatrixXd::Identity(d, d);
    }
    return;
  }
  const auto& log = std::get<LogisticRegression>(model_);
  const auto d = static_cast<Eigen::Index>(log.dim);
  const auto c = static_cast<Eigen::Index>(log.classes);
  if (d < 1 || c < 2) throw InvalidInputError("logistic regression: need dim >= 1 and classes >= 2");
  if (log.class_means) {
    class_means_ = *log.class_means;
    if (class_means_.rows() != c || class_means_.cols() != d) {
      throw ShapeError("logistic regression: class_means must be classes x dim");
    }
  } else {
    class_means_.resize(c, d);
    for (Eigen::Index k = 0; k < c; ++k) {
      const Eigen::VectorXd v = standard_normal(d, rng);
      class_means_.row(k) = log.class_separation * v.normalized();
    }
  }
  feature_chol_ = Eigen::MatrixXd::Identity(d, d);
}

Samples TaskInstance::draw(std::size_t n, Rng& rng) const {
  const auto rows = static_cast<Eigen::Index>(n);
  const auto d = feature_chol_.rows();
  Samples s;
  s.x.resize(rows, d);
  if (std::holds_alternative<LinearRegression>(model_)) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      s.x.row(i) = (feature_chol_ * standard_normal(d, rng)).transpose();
    }
    s.y = s.x * true_w_;
    return s;
  }
  std::uniform_int_distribution<int> pick(0, static_cast<int>(class_means_.rows()) - 1);
  s.labels.resize(n);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int c = pick(rng);
    s.labels[static_cast<std::size_t>(i)] = c;
    s.x.row(i) = class_means_.row(c) + standard_normal(d, rng).transpose();
  }
  return s;
}

std::vector<SharedBlock> expand_design(std::size_t pool_size, const std::vector<PartySpec>& parties,
                                       const OverlapDesign& design) {
  std::map<PartyId, std::size_t> capacity;
  std::map<int, std::vector<PartyId>> groups;
  for (const auto& p : parties) {
    if (const auto* g = std::get_if<Genuine>(&p.behavior)) {
      if (g->sample_size < 1) throw DesignError("party " + to_string(p.id) + " has no examples");
      if (!capacity.emplace(p.id, g->sample_size).second) {
        throw DesignError("duplicate party " + to_string(p.id));
      }
      if (g->overlap_group >= 0) groups[g->overlap_group].push_back(p.id);
    }
  }

  std::vector<SharedBlock> blocks;
  if (design.group_block > 0) {
    for (auto& [group, members] : groups) {
      if (members.size() >= 2) blocks.push_back({members, design.group_block});
    }
  }
  std::set<std::pair<PartyId, PartyId>> seen;
  for (const auto& [a, b, m] : design.pairs) {
    const std::string pair = "(" + to_string(a) + ", " + to_string(b) + ")";
    if (!capacity.count(a) || !capacity.count(b)) {
      throw DesignError("overlap pair " + pair + " names a party without local data");
    }
    if (a == b) throw DesignError("overlap pair " + pair + " repeats a party");
    if (!seen.insert(std::minmax(a, b)).second) {
      throw DesignError("overlap pair " + pair + " is listed twice");
    }
    if (m > 0) blocks.push_back({{std::min(a, b), std::max(a, b)}, m});
  }

  std::map<PartyId, std::size_t> used;
  std::size_t shared_total = 0;
  for (const auto& b : blocks) {
    shared_total += b.size;
    for (PartyId id : b.members) used[id] += b.size;
  }
  for (const auto& [id, n] : used) {
    if (n > capacity.at(id)) {
      std::string detail;
      for (const auto& b : blocks) {
        if (std::find(b.members.begin(), b.members.end(), id) == b.members.end()) continue;
        if (b.members.size() == 2) {
          detail += " pair (" + to_string(b.members[0]) + ", " + to_string(b.members[1]) +
                    ")=" + std::to_string(b.size) + ";";
        } else {
          detail += " group block=" + std::to_string(b.size) + ";";
        }
      }
      throw DesignError("party " + to_string(id) + " needs " + std::to_string(n) +
                        " shared examples but has sample size " +
                        std::to_string(capacity.at(id)) + ":" + detail);
    }
  }
  std::size_t needed = shared_total;
  for (const auto& [id, cap] : capacity) needed += cap - (used.count(id) ? used.at(id) : 0);
  if (needed > pool_size) {
    throw DesignError("overlap design needs " + std::to_string(needed) +
                      " distinct examples but the pool holds " + std::to_string(pool_size));
  }
  return blocks;
}

std::map<PartyId, std::vector<std::size_t>> generate_overlapping_data(
    std::size_t pool_size, const std::vector<PartySpec>& parties, const OverlapDesign& design,
    std::uint64_t seed) {
  const auto blocks = expand_design(pool_size, parties, design);

  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng({seed, kLayoutStream});
  std::shuffle(order.begin(), order.end(), rng);

  std::map<PartyId, std::vector<std::size_t>> out;
  std::size_t next = 0;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < b.size; ++i, ++next) {
      for (PartyId id : b.members) out[id].push_back(order[next]);
    }
  }
  for (const auto& p : parties) {
    const auto* g = std::get_if<Genuine>(&p.behavior);
    if (!g) continue;
    auto& mine = out[p.id];
    while (mine.size() < g->sample_size) mine.push_back(order[next++]);
    std::sort(mine.begin(), mine.end());
  }
  return out;
}

OverlapSpec realized_overlap(const std::map<PartyId, std::vector<std::size_t>>& indices,
                             const std::vector<PartyId>& order, double sigma_sq) {
  const auto n = static_cast<Eigen::Index>(order.size());
  OverlapSpec spec;
  spec.sigma_sq = sigma_sq;
  spec.overlaps = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto& ia = indices.at(order[static_cast<std::size_t>(a)]);
    spec.sample_sizes.push_back(ia.size());
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto& ib = indices.at(order[static_cast<std::size_t>(b)]);
      std::vector<std::size_t> common;
      std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                            std::back_inserter(common));
      spec.overlaps(a, b) = static_cast<double>(common.size());
    }
  }
  return spec;
}

Pool make_pool(const TaskInstance& task, std::size_t size, std::uint64_t seed) {
  auto rng = make_rng({seed, kPoolStream});
  Pool pool;
  pool.clean = task.draw(size, rng);
  const auto n = static_cast<Eigen::Index>(size);
  pool.noise = standard_normal(n, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  pool.flip_uniform.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) pool.flip_uniform[i] = unit(rng);
  if (const auto* log = std::get_if<LogisticRegression>(&task.model())) {
    // Any label other than the true one, uniformly.
    std::uniform_int_distribution<int> other(1, static_cast<int>(log->classes) - 1);
    pool.flip_to.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
      pool.flip_to[i] = (pool.clean.labels[i] + other(rng)) % static_cast<int>(log->classes);
    }
  }
  return pool;
}

Samples party_samples(const TaskInstance& task, const Pool& pool,
                      const std::vector<std::size_t>& indices, double noise_level) {
  std::vector<Eigen::Index> rows(indices.begin(), indices.end());
  Samples s;
  s.x = pool.clean.x(rows, Eigen::all);
  if (const auto* lin = std::get_if<LinearRegression>(&task.model())) {
    s.y = pool.clean.y(rows) + lin->label_noise * noise_level * pool.noise(rows);
    return s;
  }
  const auto& log = std::get<LogisticRegression>(task.model());
  const double rate = std::min(1.0, log.label_flip_rate * noise_level);
  s.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    s.labels.push_back(pool.flip_uniform[static_cast<Eigen::Index>(i)] < rate ? pool.flip_to[i]
                                                                              : pool.clean.labels[i]);
  }
  return s;
}

}  // namespace fedagg::sim
