#include "fedagg/harness/config.hpp"

#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "fedagg/errors.hpp"

namespace fedagg::harness {
namespace {

using json = nlohmann::json;

struct Issues {
  std::vector<std::string> list;
  void add(const std::string& path, const std::string& message) {
    list.push_back((path.empty() ? std::string("(root)") : path) + ": " + message);
  }
};

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

// Reads fields of one JSON object, recording every problem instead of
// stopping at the first, and complains about keys nobody asked for.
class Fields {
 public:
  Fields(const json& node, std::string path, Issues& issues)
      : node_(node), path_(std::move(path)), issues_(issues) {
    if (!node_.is_object()) issues_.add(path_, "expected an object");
  }
  Fields(const Fields&) = delete;
  ~Fields() {
    if (!node_.is_object()) return;
    for (const auto& [key, value] : node_.items()) {
      if (!used_.count(key)) issues_.add(join(path_, key), "unknown key");
    }
  }

  const json* find(const std::string& key) {
    used_.insert(key);
    if (!node_.is_object()) return nullptr;
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }
  std::string path(const std::string& key) const { return join(path_, key); }
  Issues& issues() { return issues_; }

  double number(const std::string& key, double fallback,
                const std::function<bool(double)>& ok = {}, const char* rule = "") {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_number()) {
      issues_.add(path(key), "expected a number");
      return fallback;
    }
    const double x = v->get<double>();
    if (ok && !ok(x)) {
      issues_.add(path(key), std::string("must be ") + rule);
      return fallback;
    }
    return x;
  }
  double positive(const std::string& key, double fallback) {
    return number(key, fallback, [](double x) { return x > 0.0 && std::isfinite(x); }, "> 0");
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback, std::uint64_t min = 0) {
    const json* v = find(key);
    if (!v) return fallback;
    return read_count(*v, path(key), fallback, min, issues_);
  }

  static std::uint64_t read_count(const json& v, const std::string& where, std::uint64_t fallback,
                                  std::uint64_t min, Issues& issues) {
    if (!v.is_number_integer()) {
      issues.add(where, "expected an integer");
      return fallback;
    }
    if (v.is_number_unsigned()) {
      const auto x = v.get<std::uint64_t>();
      if (x < min) {
        issues.add(where, "must be >= " + std::to_string(min));
        return fallback;
      }
      return x;
    }
    const auto x = v.get<std::int64_t>();
    if (x < 0 || static_cast<std::uint64_t>(x) < min) {
      issues.add(where, "must be >= " + std::to_string(min));
      return fallback;
    }
    return static_cast<std::uint64_t>(x);
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_boolean()) {
      issues_.add(path(key), "expected true or false");
      return fallback;
    }
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    if (!v->is_string()) {
      issues_.add(path(key), "expected a string");
      return fallback;
    }
    return v->get<std::string>();
  }

 private:
  const json& node_;
  std::string path_;
  Issues& issues_;
  std::set<std::string> used_;
};

std::optional<Eigen::VectorXd> read_vector(const json& v, const std::string& where,
                                           std::size_t length, Issues& issues) {
  if (!v.is_array() || v.size() != length) {
    issues.add(where, "expected an array of " + std::to_string(length) + " numbers");
    return std::nullopt;
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(length));
  for (std::size_t i = 0; i < length; ++i) {
    if (!v[i].is_number()) {
      issues.add(index(where, i), "expected a number");
      return std::nullopt;
    }
    out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return out;
}

std::optional<Eigen::MatrixXd> read_matrix(const json& v, const std::string& where,
                                           std::size_t rows, std::size_t cols, Issues& issues) {
  if (!v.is_array() || v.size() != rows) {
    issues.add(where, "expected " + std::to_string(rows) + " rows of " + std::to_string(cols) +
                          " numbers");
    return std::nullopt;
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = read_vector(v[r], index(where, r), cols, issues);
    if (!row) return std::nullopt;
    out.row(static_cast<Eigen::Index>(r)) = row->transpose();
  }
  return out;
}

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.begin(), v.end())); }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

// ---- task ----------------------------------------------------------------

sim::ModelSpec parse_model(const json& node, const std::string& path, Issues& issues) {
  Fields f(node, path, issues);
  const std::string kind = f.string("kind", "linear_regression");
  if (kind == "linear_regression") {
    sim::LinearRegression m;
    m.dim = f.count("dim", m.dim, 1);
    m.label_noise = f.number("label_noise", m.label_noise,
                             [](double x) { return x >= 0.0 && std::isfinite(x); }, ">= 0");
    if (const json* v = f.find("true_w")) m.true_w = read_vector(*v, f.path("true_w"), m.dim, issues);
    if (const json* v = f.find("feature_cov")) {
      m.feature_cov = read_matrix(*v, f.path("feature_cov"), m.dim, m.dim, issues);
      if (m.feature_cov && Eigen::LLT<Eigen::MatrixXd>(*m.feature_cov).info() != Eigen::Success) {
        issues.add(f.path("feature_cov"), "must be symmetric positive definite");
      }
    }
    return m;
  }
  if (kind == "logistic_regression") {
    sim::LogisticRegression m;
    m.dim = f.count("dim", m.dim, 1);
    m.classes = f.count("classes", m.classes, 2);
    m.class_separation = f.number("class_separation", m.class_separation,
                                  [](double x) { return x >= 0.0 && std::isfinite(x); }, ">= 0");
    m.label_flip_rate = f.number("label_flip_rate", m.label_flip_rate,
                                 [](double x) { return x >= 0.0 && x <= 1.0; }, "in [0, 1]");
    if (const json* v = f.find("class_means")) {
      m.class_means = read_matrix(*v, f.path("class_means"), m.classes, m.dim, issues);
    }
    return m;
  }
  issues.add(f.path("kind"), "expected linear_regression or logistic_regression");
  return sim::LinearRegression{};
}

json model_json(const sim::ModelSpec& model) {
  if (const auto* m = std::get_if<sim::LinearRegression>(&model)) {
    json j{{"kind", "linear_regression"}, {"dim", m->dim}, {"label_noise", m->label_noise}};
    if (m->true_w) j["true_w"] = vector_json(*m->true_w);
    if (m->feature_cov) j["feature_cov"] = matrix_json(*m->feature_cov);
    return j;
  }
  const auto& m = std::get<sim::LogisticRegression>(model);
  json j{{"kind", "logistic_regression"},
         {"dim", m.dim},
         {"classes", m.classes},
         {"class_separation", m.class_separation},
         {"label_flip_rate", m.label_flip_rate}};
  if (m.class_means) j["class_means"] = matrix_json(*m.class_means);
  return j;
}

sim::TaskSpec parse_task(const json& node, const std::string& path, Issues& issues) {
  Fields f(node, path, issues);
  sim::TaskSpec task;
  if (const json* v = f.find("model")) task.model = parse_model(*v, f.path("model"), issues);
  const bool logistic = std::holds_alternative<sim::LogisticRegression>(task.model);

  const std::string protocol = f.string("protocol", "multi_round_sgd");
  if (protocol == "one_round_fit") {
    task.protocol = sim::Protocol::OneRoundFit;
  } else if (protocol != "multi_round_sgd") {
    issues.add(f.path("protocol"), "expected multi_round_sgd or one_round_fit");
  }

  if (const json* v = f.find("batch")) {
    if (v->is_string() && v->get<std::string>() == "full") {
      task.batch = sim::FullBatch{};
    } else if (v->is_object()) {
      Fields b(*v, f.path("batch"), issues);
      task.batch = sim::MiniBatch{b.count("minibatch", 32, 1)};
    } else {
      issues.add(f.path("batch"), "expected \"full\" or {\"minibatch\": size}");
    }
  }
  task.rounds = f.count("rounds", task.rounds, 1);

  task.learning_rate.eta = logistic ? 0.5 : 0.1;
  if (const json* v = f.find("learning_rate")) {
    if (v->is_number()) {
      task.learning_rate.eta = v->get<double>();
      if (!(task.learning_rate.eta > 0.0)) issues.add(f.path("learning_rate"), "must be > 0");
    } else {
      Fields lr(*v, f.path("learning_rate"), issues);
      const std::string schedule = lr.string("schedule", "constant");
      if (schedule == "inverse_t") {
        task.learning_rate.kind = sim::LearningRate::Kind::InverseT;
      } else if (schedule != "constant") {
        issues.add(lr.path("schedule"), "expected constant or inverse_t");
      }
      task.learning_rate.eta = lr.positive("eta", task.learning_rate.eta);
    }
  }
  task.pool_size = f.count("pool_size", logistic ? 500 : 1500, 1);
  task.test_size = f.count("test_size", task.test_size, 1);
  if (const json* v = f.find("local_fit")) {
    Fields lf(*v, f.path("local_fit"), issues);
    task.local_fit.steps = lf.count("steps", task.local_fit.steps, 1);
    task.local_fit.lr = lf.positive("lr", task.local_fit.lr);
    task.local_fit.grad_tol = lf.number("grad_tol", task.local_fit.grad_tol,
                                        [](double x) { return x >= 0.0; }, ">= 0");
  }
  return task;
}

json task_json(const sim::TaskSpec& task) {
  json j{{"model", model_json(task.model)},
         {"protocol", task.protocol == sim::Protocol::OneRoundFit ? "one_round_fit"
                                                                  : "multi_round_sgd"},
         {"rounds", task.rounds},
         {"learning_rate",
          {{"schedule", task.learning_rate.kind == sim::LearningRate::Kind::InverseT ? "inverse_t"
                                                                                     : "constant"},
           {"eta", task.learning_rate.eta}}},
         {"pool_size", task.pool_size},
         {"test_size", task.test_size},
         {"local_fit",
          {{"steps", task.local_fit.steps},
           {"lr", task.local_fit.lr},
           {"grad_tol", task.local_fit.grad_tol}}}};
  if (const auto* mb = std::get_if<sim::MiniBatch>(&task.batch)) {
    j["batch"] = {{"minibatch", mb->size}};
  } else {
    j["batch"] = "full";
  }
  return j;
}

// ---- parties ---------------------------------------------------------------

void parse_parties(const json& node, const std::string& path, Issues& issues,
                   std::vector<sim::PartySpec>& out) {
  if (!node.is_array() || node.empty()) {
    issues.add(path, "expected a non-empty array of parties");
    return;
  }
  for (std::size_t i = 0; i < node.size(); ++i) {
    Fields f(node[i], index(path, i), issues);
    const std::uint64_t first = f.count("id", out.size());
    const std::uint64_t n = f.count("count", 1, 1);
    if (first + n - 1 > std::numeric_limits<std::uint32_t>::max()) {
      issues.add(f.path("id"), "party ids must fit in 32 bits");
      continue;
    }
    sim::PartySpec spec;
    const std::string behavior = f.string("behavior", "genuine");
    if (behavior == "genuine") {
      sim::Genuine g;
      g.sample_size = f.count("sample_size", g.sample_size, 1);
      const double group = f.number(
          "overlap_group", -1.0, [](double x) { return x >= -1.0 && x == std::floor(x); },
          "an integer >= -1");
      g.overlap_group = static_cast<int>(group);
      spec.behavior = g;
      if (const json* v = f.find("noise_level")) {
        if (v->is_number()) {
          spec.noise_level.value = v->get<double>();
          if (!(spec.noise_level.value >= 0.0)) issues.add(f.path("noise_level"), "must be >= 0");
        } else {
          Fields nl(*v, f.path("noise_level"), issues);
          if (const json* r = nl.find("log_uniform")) {
            if (auto range = read_vector(*r, nl.path("log_uniform"), 2, issues)) {
              if (!((*range)[0] > 0.0 && (*range)[1] >= (*range)[0])) {
                issues.add(nl.path("log_uniform"), "must satisfy 0 < lo <= hi");
              } else {
                spec.noise_level.log_uniform = std::pair{(*range)[0], (*range)[1]};
              }
            }
          } else {
            issues.add(f.path("noise_level"), "expected a number or {\"log_uniform\": [lo, hi]}");
          }
        }
      }
    } else if (behavior == "gaussian_adversary") {
      spec.behavior = sim::GaussianAdversary{f.positive("scale", 1.0)};
    } else if (behavior == "random_update_adversary") {
      spec.behavior = sim::RandomUpdateAdversary{f.positive("scale", 1.0)};
    } else {
      issues.add(f.path("behavior"),
                 "expected genuine, gaussian_adversary or random_update_adversary");
    }
    for (std::uint64_t k = 0; k < n; ++k) {
      spec.id = PartyId{static_cast<std::uint32_t>(first + k)};
      out.push_back(spec);
    }
  }
  std::set<PartyId> seen;
  for (const auto& p : out) {
    if (!seen.insert(p.id).second) issues.add(path, "duplicate party id " + to_string(p.id));
  }
}

json party_json(const sim::PartySpec& p) {
  json j{{"id", to_index(p.id)}};
  if (const auto* g = std::get_if<sim::Genuine>(&p.behavior)) {
    j["behavior"] = "genuine";
    j["sample_size"] = g->sample_size;
    j["overlap_group"] = g->overlap_group;
    if (p.noise_level.log_uniform) {
      j["noise_level"] = {{"log_uniform",
                           {p.noise_level.log_uniform->first, p.noise_level.log_uniform->second}}};
    } else {
      j["noise_level"] = p.noise_level.value;
    }
  } else if (const auto* a = std::get_if<sim::GaussianAdversary>(&p.behavior)) {
    j["behavior"] = "gaussian_adversary";
    j["scale"] = a->scale;
  } else {
    j["behavior"] = "random_update_adversary";
    j["scale"] = std::get<sim::RandomUpdateAdversary>(p.behavior).scale;
  }
  return j;
}

// ---- aggregators -----------------------------------------------------------

std::optional<NamedAggregator> parse_aggregator(const json& node, const std::string& path,
                                                Issues& issues) {
  if (node.is_string()) {
    try {
      const auto kind = AggregatorKind::from_name(node.get<std::string>());
      return NamedAggregator{kind.name(), kind};
    } catch (const InvalidInputError&) {
      issues.add(path, "unknown aggregator '" + node.get<std::string>() + "'");
      return std::nullopt;
    }
  }
  Fields f(node, path, issues);
  const std::string kind = f.string("kind", "");
  const std::size_t before = issues.list.size();
  std::optional<AggregatorKind::Variant> method;
  if (kind == "uniform") {
    UniformAvg m;
    m.sample_size_weights = f.boolean("sample_size_weights", m.sample_size_weights);
    method = m;
  } else if (kind == "coord_median") {
    method = CoordMedian{};
  } else if (kind == "geom_median") {
    GeomMedian m;
    m.options.smoothing = f.positive("smoothing", m.options.smoothing);
    m.options.tol = f.positive("tol", m.options.tol);
    m.options.max_iter = f.count("max_iter", m.options.max_iter, 1);
    method = m;
  } else if (kind == "ivar_mle") {
    IvarMle m;
    m.options.max_iter = f.count("max_iter", m.options.max_iter, 1);
    m.options.tol = f.positive("tol", m.options.tol);
    m.options.floor = f.positive("floor", m.options.floor);
    m.options.robust_start = f.boolean("robust_start", m.options.robust_start);
    method = m;
  } else if (kind == "ivar_vb") {
    IvarVb m;
    m.options.max_iter = f.count("max_iter", m.options.max_iter, 1);
    m.options.tol = f.positive("tol", m.options.tol);
    m.options.floor = f.positive("floor", m.options.floor);
    m.options.freeze_tau = f.boolean("freeze_tau", m.options.freeze_tau);
    m.options.freeze_sigma = f.boolean("freeze_sigma", m.options.freeze_sigma);
    m.initial_tau_sq = f.positive("tau_sq", m.initial_tau_sq);
    method = m;
  } else if (kind == "icov_mle") {
    IcovMle m;
    m.options.latent_dim = f.count("latent_dim", m.options.latent_dim, 1);
    m.options.lr = f.positive("lr", m.options.lr);
    m.options.epochs = f.count("epochs", m.options.epochs, 1);
    m.options.divergence_tol = f.positive("divergence_tol", m.options.divergence_tol);
    m.options.floor = f.positive("floor", m.options.floor);
    m.initial_sigma_u_sq = f.positive("sigma_u_sq", m.initial_sigma_u_sq);
    m.initial_sigma_sq = f.positive("sigma_sq", m.initial_sigma_sq);
    method = m;
  } else if (kind == "icov_vb") {
    IcovVb m;
    m.latent_dim = f.count("latent_dim", m.latent_dim, 1);
    m.options.max_iter = f.count("max_iter", m.options.max_iter, 1);
    m.options.tol = f.positive("tol", m.options.tol);
    m.options.floor = f.positive("floor", m.options.floor);
    m.options.shared_noise = f.boolean("shared_noise", m.options.shared_noise);
    m.options.pin_sigma_y = f.boolean("pin_sigma_y", m.options.pin_sigma_y);
    m.options.pin_sigma_u = f.boolean("pin_sigma_u", m.options.pin_sigma_u);
    m.options.pin_sigma_v = f.boolean("pin_sigma_v", m.options.pin_sigma_v);
    m.options.pin_noise = f.boolean("pin_noise", m.options.pin_noise);
    const std::string consensus = f.string("consensus", "posterior_mean");
    if (consensus == "marginal") {
      m.options.consensus = ConsensusSource::Marginal;
    } else if (consensus != "posterior_mean") {
      issues.add(f.path("consensus"), "expected posterior_mean or marginal");
    }
    m.initial_sigma_y_sq = f.positive("sigma_y_sq", m.initial_sigma_y_sq);
    m.initial_sigma_u_sq = f.positive("sigma_u_sq", m.initial_sigma_u_sq);
    m.initial_sigma_v_sq = f.positive("sigma_v_sq", m.initial_sigma_v_sq);
    method = m;
  } else {
    issues.add(f.path("kind"), kind.empty() ? "missing aggregator kind"
                                            : "unknown aggregator '" + kind + "'");
  }
  const std::string label = f.string("label", kind);
  if (label.empty() || label.find_first_of(",\"\r\n") != std::string::npos) {
    issues.add(f.path("label"), "must be non-empty without commas, quotes or newlines");
  }
  if (!method || issues.list.size() != before) return std::nullopt;
  try {
    return NamedAggregator{label, AggregatorKind(*method)};
  } catch (const InvalidInputError& e) {
    issues.add(path, e.what());
    return std::nullopt;
  }
}

json aggregator_json(const NamedAggregator& a) {
  json j{{"kind", a.kind.name()}, {"label", a.label}};
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, UniformAvg>) {
          j["sample_size_weights"] = m.sample_size_weights;
        } else if constexpr (std::is_same_v<T, GeomMedian>) {
          j["smoothing"] = m.options.smoothing;
          j["tol"] = m.options.tol;
          j["max_iter"] = m.options.max_iter;
        } else if constexpr (std::is_same_v<T, IvarMle>) {
          j["max_iter"] = m.options.max_iter;
          j["tol"] = m.options.tol;
          j["floor"] = m.options.floor;
          j["robust_start"] = m.options.robust_start;
        } else if constexpr (std::is_same_v<T, IvarVb>) {
          j["max_iter"] = m.options.max_iter;
          j["tol"] = m.options.tol;
          j["floor"] = m.options.floor;
          j["freeze_tau"] = m.options.freeze_tau;
          j["freeze_sigma"] = m.options.freeze_sigma;
          j["tau_sq"] = m.initial_tau_sq;
        } else if constexpr (std::is_same_v<T, IcovMle>) {
          j["latent_dim"] = m.options.latent_dim;
          j["lr"] = m.options.lr;
          j["epochs"] = m.options.epochs;
          j["divergence_tol"] = m.options.divergence_tol;
          j["floor"] = m.options.floor;
          j["sigma_u_sq"] = m.initial_sigma_u_sq;
          j["sigma_sq"] = m.initial_sigma_sq;
        } else if constexpr (std::is_same_v<T, IcovVb>) {
          j["latent_dim"] = m.latent_dim;
          j["max_iter"] = m.options.max_iter;
          j["tol"] = m.options.tol;
          j["floor"] = m.options.floor;
          j["shared_noise"] = m.options.shared_noise;
          j["pin_sigma_y"] = m.options.pin_sigma_y;
          j["pin_sigma_u"] = m.options.pin_sigma_u;
          j["pin_sigma_v"] = m.options.pin_sigma_v;
          j["pin_noise"] = m.options.pin_noise;
          j["consensus"] =
              m.options.consensus == ConsensusSource::Marginal ? "marginal" : "posterior_mean";
          j["sigma_y_sq"] = m.initial_sigma_y_sq;
          j["sigma_u_sq"] = m.initial_sigma_u_sq;
          j["sigma_v_sq"] = m.initial_sigma_v_sq;
        }
      },
      a.kind.method());
  return j;
}

}  // namespace

FederationConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("(document): ") + e.what()});
  }

  Issues issues;
  FederationConfig config;
  {
    Fields f(root, "", issues);
    if (const json* v = f.find("task")) config.sim.task = parse_task(*v, "task", issues);

    if (const json* v = f.find("parties")) {
      parse_parties(*v, "parties", issues, config.sim.parties);
    } else {
      issues.add("parties", "required");
    }

    if (const json* v = f.find("overlap")) {
      Fields o(*v, "overlap", issues);
      config.sim.overlap.group_block = o.count("group_block", 0);
      if (const json* pairs = o.find("pairs")) {
        if (!pairs->is_array()) issues.add("overlap.pairs", "expected an array of [a, b, count]");
        for (std::size_t i = 0; pairs->is_array() && i < pairs->size(); ++i) {
          const json& p = (*pairs)[i];
          const std::string where = index("overlap.pairs", i);
          if (!p.is_array() || p.size() != 3) {
            issues.add(where, "expected [a, b, count]");
            continue;
          }
          const auto a = Fields::read_count(p[0], index(where, 0), 0, 0, issues);
          const auto b = Fields::read_count(p[1], index(where, 1), 0, 0, issues);
          const auto m = Fields::read_count(p[2], index(where, 2), 0, 0, issues);
          config.sim.overlap.pairs.emplace_back(PartyId{static_cast<std::uint32_t>(a)},
                                                PartyId{static_cast<std::uint32_t>(b)}, m);
        }
      }
    }

    if (const json* v = f.find("participation")) {
      if (v->is_string() && v->get<std::string>() == "full") {
        config.sim.participation.k = 0;
      } else if (v->is_object()) {
        Fields p(*v, "participation", issues);
        config.sim.participation.k = p.count("random_subset", 1, 1);
        if (config.sim.participation.k > config.sim.parties.size()) {
          issues.add("participation.random_subset", "exceeds the number of parties");
        }
      } else {
        issues.add("participation", "expected \"full\" or {\"random_subset\": k}");
      }
    }

    if (const json* v = f.find("aggregators")) {
      if (!v->is_array() || v->empty()) {
        issues.add("aggregators", "expected a non-empty array");
      } else {
        std::set<std::string> labels;
        for (std::size_t i = 0; i < v->size(); ++i) {
          auto a = parse_aggregator((*v)[i], index("aggregators", i), issues);
          if (!a) continue;
          if (!labels.insert(a->label).second) {
            issues.add(index("aggregators", i), "duplicate label '" + a->label + "'");
          }
          config.aggregators.push_back(std::move(*a));
        }
      }
    } else {
      issues.add("aggregators", "required");
    }

    if (const json* v = f.find("seeds")) {
      if (v->is_array()) {
        for (std::size_t i = 0; i < v->size(); ++i) {
          config.seeds.push_back(Fields::read_count((*v)[i], index("seeds", i), 0, 0, issues));
        }
        if (v->empty()) issues.add("seeds", "at least one seed is required");
      } else if (v->is_object()) {
        Fields s(*v, "seeds", issues);
        if (const json* r = s.find("range")) {
          if (r->is_array() && r->size() == 2) {
            const auto lo = Fields::read_count((*r)[0], "seeds.range[0]", 0, 0, issues);
            const auto hi = Fields::read_count((*r)[1], "seeds.range[1]", 0, 0, issues);
            if (hi < lo || hi - lo >= 100000) {
              issues.add("seeds.range", "expected [first, last] with first <= last");
            } else {
              for (auto x = lo; x <= hi; ++x) config.seeds.push_back(x);
            }
          } else {
            issues.add("seeds.range", "expected [first, last]");
          }
        } else {
          issues.add("seeds", "expected an array or {\"range\": [first, last]}");
        }
      } else {
        issues.add("seeds", "expected an array or {\"range\": [first, last]}");
      }
    } else {
      issues.add("seeds", "required");
    }

    config.sim.window = f.count("window", config.sim.window, 1);
    config.sim.reset_state = f.boolean("reset_state", config.sim.reset_state);
    config.sim.timing = f.boolean("timing", config.sim.timing);
    if (const json* v = f.find("output")) {
      if (v->is_string()) {
        config.output = v->get<std::string>();
      } else {
        issues.add("output", "expected a string");
      }
    }
  }

  if (issues.list.empty()) {
    bool genuine = false;
    for (const auto& p : config.sim.parties) genuine = genuine || p.genuine();
    if (!genuine) issues.add("parties", "at least one genuine party is required");
  }
  if (issues.list.empty()) {
    try {
      config.sim.validate();
    } catch (const DesignError& e) {
      issues.add("overlap", e.what());
    } catch (const Error& e) {
      issues.add("(config)", e.what());
    }
  }
  if (!issues.list.empty()) throw ConfigError(std::move(issues.list));
  return config;
}

FederationConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

json to_json(const FederationConfig& config) {
  json parties = json::array();
  for (const auto& p : config.sim.parties) parties.push_back(party_json(p));
  json pairs = json::array();
  for (const auto& [a, b, m] : config.sim.overlap.pairs) pairs.push_back({to_index(a), to_index(b), m});
  json aggregators = json::array();
  for (const auto& a : config.aggregators) aggregators.push_back(aggregator_json(a));

  json j{{"task", task_json(config.sim.task)},
         {"parties", parties},
         {"overlap", {{"group_block", config.sim.overlap.group_block}, {"pairs", pairs}}},
         {"aggregators", aggregators},
         {"seeds", config.seeds},
         {"window", config.sim.window},
         {"reset_state", config.sim.reset_state},
         {"timing", config.sim.timing}};
  if (config.sim.participation.k == 0) {
    j["participation"] = "full";
  } else {
    j["participation"] = {{"random_subset", config.sim.participation.k}};
  }
  if (config.output) j["output"] = *config.output;
  return j;
}

std::string serialize_config(const FederationConfig& config) { return to_json(config).dump(2) + "\n"; }

bool operator==(const FederationConfig& a, const FederationConfig& b) {
  // The serialized form is complete and canonical, so comparing it compares
  // every field.
  return to_json(a) == to_json(b);
}

}  // namespace fedagg::harness
