#include "fedagg/aggregator.hpp"

#include <vector>

#include "fedagg/errors.hpp"

namespace fedagg {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInputError("aggregator hyperparameter: " + what);
}

void validate(const AggregatorKind::Variant& method) {
  std::visit(overloaded{
                 [](const UniformAvg&) {},
                 [](const CoordMedian&) {},
                 [](const GeomMedian& m) {
                   require(m.options.smoothing > 0.0, "smoothing must be > 0");
                   require(m.options.tol > 0.0, "tol must be > 0");
                   require(m.options.max_iter >= 1, "max_iter must be >= 1");
                 },
                 [](const IvarMle& m) {
                   require(m.options.tol > 0.0, "tol must be > 0");
                   require(m.options.floor > 0.0, "floor must be > 0");
                   require(m.options.max_iter >= 1, "max_iter must be >= 1");
                   require(m.options.window >= 1, "window must be >= 1");
                 },
                 [](const IvarVb& m) {
                   require(m.options.tol > 0.0, "tol must be > 0");
                   require(m.options.floor > 0.0, "floor must be > 0");
                   require(m.options.max_iter >= 1, "max_iter must be >= 1");
                   require(m.initial_tau_sq > 0.0, "tau_sq must be > 0");
                 },
                 [](const IcovMle& m) {
                   require(m.options.latent_dim >= 1, "latent_dim must be >= 1");
                   require(m.options.lr > 0.0, "lr must be > 0");
                   require(m.options.epochs >= 1, "epochs must be >= 1");
                   require(m.options.divergence_tol > 0.0, "divergence_tol must be > 0");
                   require(m.options.floor > 0.0, "floor must be > 0");
                   require(m.initial_sigma_u_sq > 0.0 && m.initial_sigma_sq > 0.0,
                           "initial variances must be > 0");
                 },
                 [](const IcovVb& m) {
                   require(m.latent_dim >= 1, "latent_dim must be >= 1");
                   require(m.options.tol > 0.0, "tol must be > 0");
                   require(m.options.floor > 0.0, "floor must be > 0");
                   require(m.options.max_iter >= 1, "max_iter must be >= 1");
                   require(m.initial_sigma_y_sq > 0.0 && m.initial_sigma_u_sq > 0.0 &&
                               m.initial_sigma_v_sq > 0.0,
                           "initial variances must be > 0");
                 },
             },
             method);
}

}  // namespace

AggregatorKind::AggregatorKind(Variant method) : method_(std::move(method)) { validate(method_); }

const std::vector<std::string>& AggregatorKind::method_names() {
  static const std::vector<std::string> names{"uniform",  "geom_median", "coord_median", "ivar_vb",
                                              "ivar_mle", "icov_vb",     "icov_mle"};
  return names;
}

AggregatorKind AggregatorKind::from_name(std::string_view name) {
  if (name == "uniform") return AggregatorKind(UniformAvg{});
  if (name == "coord_median") return AggregatorKind(CoordMedian{});
  if (name == "geom_median") return AggregatorKind(GeomMedian{});
  if (name == "ivar_mle") return AggregatorKind(IvarMle{});
  if (name == "ivar_vb") return AggregatorKind(IvarVb{});
  if (name == "icov_mle") return AggregatorKind(IcovMle{});
  if (name == "icov_vb") return AggregatorKind(IcovVb{});
  throw InvalidInputError("unknown aggregator '" + std::string(name) + "'");
}

std::string AggregatorKind::name() const {
  return std::visit(overloaded{
                        [](const UniformAvg&) { return std::string("uniform"); },
                        [](const CoordMedian&) { return std::string("coord_median"); },
                        [](const GeomMedian&) { return std::string("geom_median"); },
                        [](const IvarMle&) { return std::string("ivar_mle"); },
                        [](const IvarVb&) { return std::string("ivar_vb"); },
                        [](const IcovMle&) { return std::string("icov_mle"); },
                        [](const IcovVb&) { return std::string("icov_vb"); },
                    },
                    method_);
}

bool AggregatorKind::uses_state() const noexcept {
  return !std::holds_alternative<UniformAvg>(method_) &&
         !std::holds_alternative<CoordMedian>(method_) &&
         !std::holds_alternative<GeomMedian>(method_);
}

NoiseState::NoiseState(std::size_t window, std::uint64_t seed) : window_(window), seed_(seed) {
  if (window_ < 1) throw InvalidInputError("noise state window must be >= 1");
  reset();
}

double NoiseState::reported_size(PartyId id) const {
  auto it = reported_sizes_.find(id);
  return it == reported_sizes_.end() ? 1.0 : it->second;
}

void NoiseState::reset() {
  rounds_.clear();
  ivar_mle = {};
  ivar_vb = {};
  icov_mle = {};
  icov_vb = {};
  icov_mle.seed = seed_;
  icov_vb.seed = seed_;
}

void NoiseState::push(const UpdateMatrix& x) {
  if (!rounds_.empty() && rounds_.back().dim() != x.dim()) {
    throw ShapeError("aggregate: update dimension changed between rounds");
  }
  rounds_.push_back(x);
  while (rounds_.size() > window_) rounds_.pop_front();
}

AggregateResult aggregate(const AggregatorKind& kind, const UpdateMatrix& x, NoiseState& state) {
  return std::visit(
      overloaded{
          [&](const UniformAvg& m) {
            std::vector<double> w(static_cast<std::size_t>(x.num_parties()), 1.0);
            if (m.sample_size_weights) {
              for (std::size_t j = 0; j < w.size(); ++j) {
                w[j] = state.reported_size(x.party_ids()[j]);
              }
            }
            return weighted_average(x, w);
          },
          [&](const CoordMedian&) { return coordinate_median(x); },
          [&](const GeomMedian& m) { return geometric_median(x, m.options); },
          [&](const IvarMle& m) {
            state.push(x);
            const std::vector<UpdateMatrix> window(state.rounds_.begin(), state.rounds_.end());
            IvarMleOptions opts = m.options;
            opts.window = state.window_;
            return ivar_mle_aggregate(window, state.ivar_mle, opts).back();
          },
          [&](const IvarVb& m) {
            if (state.ivar_vb.sigma.empty()) state.ivar_vb.tau_sq = m.initial_tau_sq;
            state.push(x);
            const std::vector<UpdateMatrix> window(state.rounds_.begin(), state.rounds_.end());
            IvarVbOptions opts = m.options;
            opts.window = state.window_;
            return ivar_vb_aggregate(window, state.ivar_vb, opts).back();
          },
          [&](const IcovMle& m) {
            if (state.icov_mle.v.empty()) {
              state.icov_mle.sigma_u_sq = m.initial_sigma_u_sq;
              state.icov_mle.sigma_sq = m.initial_sigma_sq;
            }
            state.push(x);
            const std::vector<UpdateMatrix> window(state.rounds_.begin(), state.rounds_.end());
            return icov_mle_fit(window, state.icov_mle, m.options).results.back();
          },
          [&](const IcovVb& m) {
            if (state.icov_vb.parties.empty()) {
              state.icov_vb.latent_dim = m.latent_dim;
              state.icov_vb.sigma_y_sq = m.initial_sigma_y_sq;
              state.icov_vb.sigma_u_sq = m.initial_sigma_u_sq;
              state.icov_vb.sigma_v_sq = m.initial_sigma_v_sq;
            }
            state.push(x);
            const std::vector<UpdateMatrix> window(state.rounds_.begin(), state.rounds_.end());
            return icov_vb_aggregate(window, state.icov_vb, m.options).back();
          },
      },
      kind.method());
}

}  // namespace fedagg
