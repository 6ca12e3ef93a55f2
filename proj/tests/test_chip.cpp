// SPDX-License-Identifier: Apache-2.0
// Layered photonic chip: mixers, propagation, intensity gradients, training.

#include "wavetrain/chip.hpp"
#include "wavetrain/gradcheck.hpp"

#include <catch_amalgamated.hpp>

using namespace wavetrain;
using namespace wavetrain::chip;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ChipState identity_chip(int m, int n) {
  return ChipState(std::vector<ComplexMatrix>(std::size_t(n), ComplexMatrix::Identity(m, m)));
}

ChipState random_chip(int m, int n, std::uint64_t seed) {
  Rng rng(RngSeed{seed});
  std::vector<ComplexMatrix> u;
  for (int k = 0; k < n; ++k) u.push_back(build_coupler_mesh(m, default_sublayers(m), rng));
  ChipState chip(std::move(u));
  std::vector<RealVector> psi;
  for (int k = 0; k < n; ++k) {
    RealVector v(m);
    for (int i = 0; i < m; ++i) v[i] = rng.uniform(-kPi, kPi);
    psi.push_back(v);
  }
  chip.set_phases(std::move(psi));
  return chip;
}

double cosine(const RealVector& x, const RealVector& y) { return x.dot(y) / (x.norm() * y.norm()); }

// Per-layer projection of g onto the exact gradient, relative to its norm.
std::vector<double> layer_ratios(const LayerGradients& g, const LayerGradients& exact) {
  std::vector<double> r;
  for (std::size_t k = 0; k < g.size(); ++k) r.push_back(g[k].dot(exact[k]) / exact[k].squaredNorm());
  return r;
}

double spread(const std::vector<double>& r) {
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  return *hi / *lo;
}

}  // namespace

TEST_CASE("coupler splits a single input evenly", "[chip][mixer]") {
  const Eigen::Vector2cd out = coupler() * Eigen::Vector2cd(1.0, 0.0);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK_THAT(out[0].real(), WithinAbs(s, 1e-15));
  CHECK(out[0].imag() == 0.0);
  CHECK(out[1].real() == 0.0);
  CHECK_THAT(out[1].imag(), WithinAbs(s, 1e-15));
}

TEST_CASE("coupler meshes are unitary and fully mixing", "[chip][mixer]") {
  for (int m : {2, 3, 4, 5, 8, 12}) {
    const ComplexMatrix u = build_coupler_mesh(m, default_sublayers(m), RngSeed{std::uint64_t(m)});
    CHECK(unitarity_error(u) < 1e-13);
  }
  const ComplexMatrix u8 = build_coupler_mesh(8, 3, RngSeed{1});
  CHECK(min_column_support(u8) == 8);
  // two sublayers reach at most four outputs
  CHECK(min_column_support(build_coupler_mesh(8, 2, RngSeed{1})) <= 4);
  CHECK(build_coupler_mesh(8, 4, RngSeed{5}) == build_coupler_mesh(8, 4, RngSeed{5}));
  CHECK_THROWS_AS(build_coupler_mesh(1, 2, RngSeed{1}), InvalidArgument);
  CHECK_THROWS_AS(build_coupler_mesh(4, 0, RngSeed{1}), InvalidArgument);
}

TEST_CASE("brick meshes spread one channel per sublayer", "[chip][mixer]") {
  CHECK(unitarity_error(build_coupler_brick(6, 5)) < 1e-13);
  CHECK(min_column_support(build_coupler_brick(8, 1)) == 2);
  CHECK(min_column_support(build_coupler_brick(8, 8)) == 8);
  CHECK(min_column_support(build_coupler_brick(8, 3)) < 8);
}

TEST_CASE("chip state validation", "[chip][state]") {
  CHECK_THROWS_AS(ChipState(std::vector<ComplexMatrix>{}), InvalidArgument);
  CHECK_THROWS_AS(ChipState({ComplexMatrix::Identity(1, 1)}), InvalidArgument);
  CHECK_THROWS_AS(ChipState({ComplexMatrix::Identity(3, 3) * 2.0}), InvalidArgument);
  CHECK_THROWS_AS(ChipState({ComplexMatrix::Identity(3, 3), ComplexMatrix::Identity(2, 2)}), InvalidArgument);
  ChipState c = identity_chip(3, 2);
  CHECK_THROWS_AS(c.set_loss_factor(0.0), InvalidArgument);
  CHECK_THROWS_AS(c.set_loss_factor(1.1), InvalidArgument);
  CHECK_THROWS_AS(c.set_phases({RealVector::Zero(3)}), InvalidArgument);
  CHECK_THROWS_AS(c.set_uneven_loss({RealVector::Ones(3), RealVector::Zero(3)}), InvalidArgument);
}

TEST_CASE("identity chain passes the input through", "[chip][propagation]") {
  const ChipState c = identity_chip(4, 5);
  const ComplexVector a = random_complex_vector(4, RngSeed{1});
  const auto t = forward(c, a);
  REQUIRE(t.states.size() == 6);
  for (const auto& s : t.states) CHECK(s == a);
  CHECK(backward(c, a).input_side() == a);
}

TEST_CASE("two-channel hand example", "[chip][propagation]") {
  ChipState c({coupler()});
  c.set_phases({(RealVector(2) << kPi / 2.0, 0.0).finished()});
  const ComplexVector o = forward(c, (ComplexVector(2) << 1.0, 0.0).finished()).output_side();
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(o[0] - Complex(0.0, s)) < 1e-15);
  CHECK(std::abs(o[1] - Complex(0.0, s)) < 1e-15);
}

TEST_CASE("lossless propagation keeps the norm", "[chip][propagation]") {
  const ChipState c = random_chip(6, 8, 3);
  const ComplexVector a = random_complex_vector(6, RngSeed{2});
  for (const auto& s : forward(c, a).states) CHECK_THAT(s.norm(), WithinRel(a.norm(), 1e-13));
  for (const auto& s : backward(c, a).states) CHECK_THAT(s.norm(), WithinRel(a.norm(), 1e-13));
}

TEST_CASE("backward propagation is the transpose", "[chip][propagation]") {
  ChipState c = random_chip(5, 4, 9);
  CHECK((chip_backward_matrix(c) - chip_effective_matrix(c).transpose()).norm() < 1e-13);
  std::vector<RealVector> d;
  for (int k = 0; k < 4; ++k) d.push_back(RealVector::Constant(5, 0.9) + 0.02 * RealVector::LinSpaced(5, 0.0, 4.0));
  c.set_uneven_loss(d);
  c.set_loss_factor(0.95);
  CHECK((chip_backward_matrix(c) - chip_effective_matrix(c).transpose()).norm() < 1e-13);
}

TEST_CASE("effective matrix", "[chip][propagation]") {
  ChipState c = random_chip(4, 6, 21);
  const ComplexMatrix w = chip_effective_matrix(c);
  CHECK(unitarity_error(w) < 1e-13);
  const ComplexVector a = random_complex_vector(4, RngSeed{3});
  CHECK((w * a - forward(c, a).output_side()).norm() < 1e-13);
  const double lambda = std::sqrt(0.94);
  c.set_loss_factor(lambda);
  CHECK((chip_effective_matrix(c) - std::pow(lambda, 6) * w).norm() < 1e-13);
  CHECK((chip_effective_matrix(c.lossless()) - w).norm() < 1e-13);
}

TEST_CASE("injected error", "[chip][gradient]") {
  const ComplexVector o = (ComplexVector(1) << Complex(1.0, 2.0)).finished();
  const ComplexVector z = ComplexVector::Zero(1);
  // -j conj(1 + 2j) = -j (1 - 2j) = -2 - j
  const ComplexVector e = inject_error(o, z);
  CHECK(e[0] == Complex(-2.0, -1.0));
  const ComplexVector o4 = random_complex_vector(4, RngSeed{6}), t4 = random_complex_vector(4, RngSeed{7});
  const ComplexVector e4 = inject_error(o4, t4);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK_THAT(std::abs(e4[i]), WithinRel(std::abs(o4[i] - t4[i]), 1e-15));
}

TEST_CASE("intensity gradient examples", "[chip][gradient]") {
  const ChipState c = identity_chip(2, 1);
  const ComplexVector a = (ComplexVector(2) << 1.0, 0.0).finished();
  const auto zero = intensity_gradient_forwarddir(c, a, ComplexVector::Zero(2));
  CHECK(zero[0].cwiseAbs().maxCoeff() == 0.0);
  // a = 1 and e^ = -1 on channel 0: -(0 - 1 - 1) = 2
  const auto g = intensity_gradient_forwarddir(c, a, (ComplexVector(2) << -1.0, 0.0).finished());
  CHECK(g[0][0] == 2.0);
  CHECK(g[0][1] == 0.0);
}

TEST_CASE("lossless intensity gradient is the exact gradient", "[chip][gradient]") {
  const ChipState c = random_chip(4, 3, 17);
  Rng rng(RngSeed{4});
  const ComplexVector a = random_unit_vector(rng, 4);
  const ComplexVector o_t = random_complex_vector(4, RngSeed{5}) * 0.5;
  const ComplexVector o = forward(c, a).output_side();
  const ComplexVector e = inject_error(o, o_t);
  const RealVector exact = flatten(exact_phase_gradient(c, a, o_t));
  const RealVector fwd = flatten(intensity_gradient_forwarddir(c, a, e));
  const RealVector bwd = flatten(intensity_gradient_backwarddir(c, o, e));
  CHECK(cosine(fwd, exact) >= 0.999999);
  CHECK((fwd - exact).norm() < 1e-12 * exact.norm());
  CHECK((bwd - fwd).norm() < 1e-10 * fwd.norm());
  CHECK((flatten(averaged_gradient(c, a, o, e)) - fwd).norm() < 1e-10 * fwd.norm());
}

TEST_CASE("intensity gradient matches finite differences", "[chip][gradient]") {
  gradcheck::ChipCheckConfig cfg;
  const auto r = gradcheck::check_chip_gradient(cfg);
  CHECK(r.checked == 12);
  CHECK_THAT(r.scale, WithinAbs(1.0, 1e-8));
  CHECK(r.max_relative_error <= 1e-6);
  cfg.flip_sign = true;
  CHECK_FALSE(gradcheck::check_chip_gradient(cfg).passed());
}

TEST_CASE("uniform loss keeps the per-layer direction", "[chip][gradient][loss]") {
  ChipState c = random_chip(6, 10, 41);
  c.set_loss_factor(0.97);
  Rng rng(RngSeed{8});
  const ComplexVector a = random_unit_vector(rng, 6);
  const ComplexVector o_t = rng.unitary(6) * a;
  const ComplexVector o = forward(c, a).output_side();
  const ComplexVector e = inject_error(o, o_t);
  const auto exact = exact_phase_gradient(c, a, o_t);
  const auto fwd = intensity_gradient_forwarddir(c, a, e);
  const auto bwd = intensity_gradient_backwarddir(c, o, e);
  for (std::size_t k = 0; k < exact.size(); ++k) {
    CHECK(cosine(fwd[k], exact[k]) >= 0.999);
    CHECK(cosine(bwd[k], exact[k]) >= 0.999);
  }
  // light entering at the output side has lost most on reaching the input side
  const auto rf = layer_ratios(fwd, exact), rb = layer_ratios(bwd, exact);
  for (std::size_t k = 1; k < rb.size(); ++k) {
    CHECK(rb[k] > rb[k - 1]);
    CHECK(rf[k] < rf[k - 1]);
  }
}

TEST_CASE("averaging both directions flattens the loss profile", "[chip][gradient][loss]") {
  // lambda^(2N) = 0.94^70, about -19 dB
  ChipState c = random_chip(4, 70, 43);
  c.set_loss_factor(std::sqrt(0.94));
  Rng rng(RngSeed{9});
  const ComplexVector a = random_unit_vector(rng, 4);
  const ComplexVector o_t = rng.unitary(4) * a;
  const ComplexVector o = forward(c, a).output_side();
  const ComplexVector e = inject_error(o, o_t);
  const auto exact = exact_phase_gradient(c, a, o_t);
  const auto fwd = intensity_gradient_forwarddir(c, a, e);
  const auto avg = averaged_gradient(fwd, intensity_gradient_backwarddir(c, o, e));
  const double s_fwd = spread(layer_ratios(fwd, exact));
  const double s_avg = spread(layer_ratios(avg, exact));
  CHECK(s_avg < s_fwd);
  CHECK(s_avg < 0.5 * s_fwd);
}

TEST_CASE("renormalization modes", "[chip][loss]") {
  ChipState c = identity_chip(2, 4);
  c.set_loss_factor(0.5);
  const ComplexVector v = (ComplexVector(2) << 3.0, Complex(0.0, 4.0)).finished();
  CHECK(rescale(v, 1.0, c, Renormalization::none) == v);
  CHECK_THAT(rescale(v, 1.0, c, Renormalization::per_sample).norm(), WithinRel(1.0, 1e-15));
  CHECK(rescale(v, 1.0, c, Renormalization::fixed_factor)[0] == Complex(48.0, 0.0));
  CHECK(rescale(ComplexVector::Zero(2), 1.0, c, Renormalization::per_sample).norm() == 0.0);
}

TEST_CASE("scenario names", "[chip][config]") {
  for (auto s : {LossScenario::ideal, LossScenario::uniform, LossScenario::uniform_bidirectional,
                 LossScenario::uneven_bidirectional})
    CHECK(parse_scenario(to_string(s)) == s);
  CHECK(parse_scenario("lossy") == LossScenario::uniform);
  CHECK_FALSE(parse_scenario("uneven").has_value());
}

TEST_CASE("phase window fraction", "[chip][training]") {
  const std::vector<RealVector> psi{(RealVector(4) << 0.0, 0.6, -0.7, 3.0).finished()};
  CHECK(fraction_in_window(psi) == 0.5);
  CHECK(fraction_in_window({}) == 1.0);
}

TEST_CASE("built chips follow the config", "[chip][training]") {
  ChipExperimentConfig cfg;
  cfg.channels = 6;
  cfg.layers = 4;
  cfg.scenario = LossScenario::uneven_bidirectional;
  const ChipState c = build_chip(cfg);
  CHECK(c.layers() == 4);
  CHECK(c.channels() == 6);
  CHECK_THAT(c.loss_factor(), WithinRel(std::sqrt(0.94), 1e-15));
  REQUIRE(c.has_uneven_loss());
  for (const auto& d : c.uneven_loss()) {
    CHECK(d.maxCoeff() <= 1.0);
    CHECK(d.minCoeff() >= std::sqrt(0.99));
  }
  // scenarios sharing a seed share the mixers and the target
  ChipExperimentConfig ideal = cfg;
  ideal.scenario = LossScenario::ideal;
  CHECK(build_chip(ideal).mixers() == c.mixers());
  CHECK(build_target(ideal) == build_target(cfg));
  CHECK(unitarity_error(build_target(cfg)) < 1e-13);
  cfg.channels = 1;
  CHECK_THROWS_AS(build_chip(cfg), InvalidArgument);
}

TEST_CASE("zero learning rate keeps the chip", "[chip][training]") {
  ChipExperimentConfig cfg;
  cfg.channels = 4;
  cfg.layers = 3;
  cfg.iterations = 50;
  cfg.eta = 0.0;
  const auto r = train_chip(cfg);
  REQUIRE(r.record.rows.size() == 50);
  for (const auto& p : r.chip.phases()) CHECK(p.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.record.final_nrmse == r.record.initial_nrmse);
}

TEST_CASE("a reachable target stays reached", "[chip][training]") {
  ChipExperimentConfig cfg;
  cfg.channels = 4;
  cfg.layers = 3;
  cfg.iterations = 100;
  cfg.target = chip_effective_matrix(build_chip(cfg));
  const auto r = train_chip(cfg);
  for (const auto& row : r.record.rows) REQUIRE(row.nrmse <= 1e-10);
  CHECK(r.record.final_nrmse <= 1e-10);
}

TEST_CASE("training lowers the error and is deterministic", "[chip][training]") {
  ChipExperimentConfig cfg;
  cfg.channels = 4;
  cfg.layers = 8;
  cfg.iterations = 1500;
  cfg.eta = 0.05;
  const auto r = train_chip(cfg);
  CHECK(r.record.final_nrmse < 0.2 * r.record.initial_nrmse);
  CHECK_FALSE(r.record.lossless_reeval_nrmse.has_value());
  const auto again = train_chip(cfg);
  for (std::size_t k = 0; k < r.record.rows.size(); ++k) REQUIRE(again.record.rows[k].nrmse == r.record.rows[k].nrmse);
  CHECK(again.chip.phases() == r.chip.phases());

  cfg.scenario = LossScenario::uneven_bidirectional;
  cfg.iterations = 10;
  CHECK(train_chip(cfg).record.lossless_reeval_nrmse.has_value());
}

TEST_CASE("truncation keeps phases in the window", "[chip][training]") {
  ChipExperimentConfig cfg;
  cfg.channels = 4;
  cfg.layers = 4;
  cfg.iterations = 500;
  cfg.eta = 0.2;
  cfg.truncate_phases = true;
  const auto r = train_chip(cfg);
  CHECK(r.record.phase_fraction_in_window == 1.0);
  for (const auto& p : r.chip.phases()) CHECK(p.cwiseAbs().maxCoeff() <= kPhaseWindow);
}
