#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mrp/error.hpp"
#include "mrp/finite_diff.hpp"
#include "mrp/metrics.hpp"

using namespace mrp;

TEST_SUITE("finite differences") {

TEST_CASE("central difference of x^2 at 3") {
  const Tensor g = ad::fd_gradient([](const Tensor& x) { return x[0] * x[0]; }, Tensor::scalar(3.0), 1e-5);
  CHECK(std::abs(g[0] - 6.0) <= 1e-8);
}

TEST_CASE("constant function has zero gradient") {
  const Tensor g = ad::fd_gradient([](const Tensor&) { return 4.2; }, Tensor::column({1, 2, 3}));
  CHECK(g == Tensor::zeros(3, 1));
}

TEST_CASE("gradient keeps the point's shape and order") {
  const Tensor x = Tensor::zeros(2, 3);
  const Tensor g = ad::fd_gradient(
      [](const Tensor& p) {
        double s = 0;
        for (std::size_t i = 0; i < p.size(); ++i) s += static_cast<double>(i + 1) * p[i];
        return s;
      },
      x);
  CHECK(g.shape() == x.shape());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(static_cast<double>(i + 1)));
}

TEST_CASE("non-finite values and bad steps are rejected") {
  CHECK_THROWS_AS(ad::fd_gradient([](const Tensor& x) { return std::log(x[0]); }, Tensor::scalar(0.0)), Error);
  CHECK_THROWS_AS(ad::fd_gradient([](const Tensor& x) { return x[0]; }, Tensor::scalar(0.0), 0.0), Error);
}

TEST_CASE("comparison splits relative and absolute coordinates") {
  const std::vector<double> a{1.0, 2e-9, -3.0};
  const std::vector<double> n{1.0001, 1e-9, -3.0};
  const auto c = ad::compare_gradients(a, n, 1e-8);
  CHECK(c.max_rel_error == doctest::Approx(1e-4 / 1.0001));
  CHECK(c.max_abs_error == doctest::Approx(1e-9));
  CHECK(c.worst_index == 0);
  CHECK(c.within(1e-3, 1e-8));
  CHECK_FALSE(c.within(1e-5, 1e-8));
  CHECK_THROWS_AS(ad::compare_gradients(a, std::vector<double>{1.0}, 1e-8), Error);
}

// Outer loss as a function of the modulator parameters on a 4-class,
// 8-sample episode: run before trusting anything built on the meta-gradient.
TEST_CASE("modulator gradient of the outer loss matches finite differences") {
  const auto inst = testing::small_instance(0);
  Rng sr = make_stream(0, "split");
  Rng mr = make_stream(0, "mixup");
  const auto ep = trainer::split_episode(inst.batch.labels, sr);
  const auto plan = trainer::draw_mixup(ep, 1.0, 1.0, mr);
  trainer::InnerOptions opts;
  opts.alpha = 0.1;
  const auto exact = trainer::outer_update(inst.model, inst.theta, inst.phi, inst.batch, ep, plan, inst.candidates,
                                           opts, 0.0);
  const auto f = [&](const Tensor& p) {
    metareg::ModulatorParams phi = inst.phi;
    phi.assign_flat(p.values());
    return trainer::outer_loss(inst.model, inst.theta, phi, inst.batch, ep, plan, inst.candidates, opts);
  };
  const Tensor fd = ad::fd_gradient(f, Tensor::column(inst.phi.flat()), 1e-5);
  const auto c = ad::compare_gradients(exact.grad_phi, fd.values(), 1e-8);
  CHECK(c.within(1e-4, 1e-8));
}

}  // TEST_SUITE
