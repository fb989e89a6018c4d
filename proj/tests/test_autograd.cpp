#include <doctest.h>

#include "support/gradcheck.hpp"

using namespace sgan;
using namespace sgan::testing;
namespace o = sgan::ops;

namespace {

void require_grad_ok(const ScalarFn& f, std::vector<TensorD> inputs) {
  const auto r = gradcheck(f, std::move(inputs));
  INFO(r.detail);
  REQUIRE(r.ok);
}

// Weighted sum so that every output entry gets a distinct upstream gradient.
VarD weighted(const VarD& v, std::uint64_t seed = 99) {
  return o::sum(o::mul(v, o::constant(random_tensor(v.shape(), seed))));
}

}  // namespace

TEST_CASE("elementwise ops with broadcasting match finite differences") {
  const Shape full{2, 3, 2, 2}, chan{1, 3, 1, 1}, sample{2, 1, 1, 1};
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::add(v[0], v[1])); },
                  {random_tensor(full, 1), random_tensor(chan, 2)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::sub(v[1], v[0])); },
                  {random_tensor(full, 3), random_tensor(sample, 4)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::mul(v[0], v[1])); },
                  {random_tensor(full, 5), random_tensor(chan, 6)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::pow_scalar(o::add_scalar(v[0], 2.0), -0.5)); },
                  {random_tensor(full, 7)});
}

TEST_CASE("reductions, reshape and broadcast match finite differences") {
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::sum_to(v[0], Shape{2, 1, 1, 3})); },
                  {random_tensor(Shape{2, 4, 2, 3}, 8)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::broadcast_to(v[0], Shape{2, 4, 2, 3})); },
                  {random_tensor(Shape{1, 4, 1, 3}, 9)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::reshape(v[0], Shape{6, 4})); },
                  {random_tensor(Shape{2, 3, 2, 2}, 10)});
  require_grad_ok([](const std::vector<VarD>& v) { return o::mean(o::mul(v[0], v[0])); },
                  {random_tensor(Shape{3, 5}, 11)});
}

TEST_CASE("matmul in all transpose modes matches finite differences") {
  for (int mode = 0; mode < 4; ++mode) {
    const bool ta = mode & 1, tb = mode & 2;
    const Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
    const Shape sb = tb ? Shape{5, 4} : Shape{4, 5};
    require_grad_ok([ta, tb](const std::vector<VarD>& v) { return weighted(o::matmul(v[0], v[1], ta, tb)); },
                    {random_tensor(sa, 12 + mode), random_tensor(sb, 20 + mode)});
  }
}

TEST_CASE("conv2d and its adjoints match finite differences") {
  for (int k : {1, 3}) {
    const int pad = k / 2;
    const Shape xs{2, 2, 4, 4}, ws{3, 2, k, k}, ys{2, 3, 4, 4};
    require_grad_ok([pad](const std::vector<VarD>& v) { return weighted(o::conv2d(v[0], v[1], pad)); },
                    {random_tensor(xs, 30), random_tensor(ws, 31)});
    require_grad_ok(
        [pad, xs](const std::vector<VarD>& v) { return weighted(o::conv2d_input_grad(v[0], v[1], xs, pad)); },
        {random_tensor(ys, 32), random_tensor(ws, 33)});
    require_grad_ok(
        [pad, ws](const std::vector<VarD>& v) { return weighted(o::conv2d_weight_grad(v[0], v[1], ws, pad)); },
        {random_tensor(xs, 34), random_tensor(ys, 35)});
  }
  // valid (unpadded) 3x3
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::conv2d(v[0], v[1], 0)); },
                  {random_tensor(Shape{1, 2, 4, 4}, 36), random_tensor(Shape{2, 2, 3, 3}, 37)});
}

TEST_CASE("resampling, activations and channel ops match finite differences") {
  const Shape s{2, 3, 4, 4};
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::upsample2x(v[0])); }, {random_tensor(s, 40)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::avg_pool2x(v[0])); }, {random_tensor(s, 41)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::leaky_relu(v[0], 0.2)); },
                  {random_tensor(s, 42)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::softplus(o::mul_scalar(v[0], 4.0))); },
                  {random_tensor(s, 43)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::sigmoid(o::mul_scalar(v[0], 3.0))); },
                  {random_tensor(s, 44)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::concat_channels(v[0], v[1])); },
                  {random_tensor(s, 45), random_tensor(Shape{2, 1, 4, 4}, 46)});
  require_grad_ok([](const std::vector<VarD>& v) { return weighted(o::slice_channels(v[0], 1, 3)); },
                  {random_tensor(s, 47)});
}

TEST_CASE("double backward: gradient of a squared input-gradient norm") {
  // h(x, w) = sum(lrelu(conv(x, w))^2 * r); R(w) = ||d h / d x||^2.
  const TensorD x0 = random_tensor(Shape{1, 2, 4, 4}, 50);
  const auto r = o::constant(random_tensor(Shape{1, 2, 4, 4}, 52));
  auto penalty = [r](const VarD& x, const VarD& w) {
    const VarD y = o::softplus(o::conv2d(o::upsample2x(o::avg_pool2x(x)), w, 1));
    const VarD h = o::sum(o::mul(o::mul(y, y), r));
    const auto g = ag::grad<double>(h, std::vector<VarD>{x}, /*create_graph=*/true);
    return o::sum(o::mul(g[0], g[0]));
  };
  require_grad_ok(
      [&](const std::vector<VarD>& v) {
        const VarD x(x0, true);
        return penalty(x, v[0]);
      },
      {random_tensor(Shape{2, 2, 3, 3}, 51)});
}

TEST_CASE("grad returns zeros for inputs the output does not depend on") {
  const VarD a(random_tensor(Shape{2, 2}, 60), true);
  const VarD b(random_tensor(Shape{2, 2}, 61), true);
  const VarD out = o::sum(o::mul(a, a));
  const auto g = ag::grad<double>(out, std::vector<VarD>{a, b});
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(g[0].value()[i] == doctest::Approx(2 * a.value()[i]));
    CHECK(g[1].value()[i] == 0.0);
  }
}

TEST_CASE("no-grad mode records no graph") {
  const VarD a(random_tensor(Shape{2, 2}, 62), true);
  ag::NoGradGuard off;
  const VarD out = o::mul(a, a);
  CHECK_FALSE(out.requires_grad());
}
