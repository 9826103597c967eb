#include <cmath>
#include <random>

#include <doctest.h>

#include "advlab/tensor.hpp"

using namespace advlab;

namespace {

Tensor random_tensor(Shape shape, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(gen);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("elementwise add") {
  auto r = add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  CHECK(r.to_vector() == std::vector<double>{4, 6});
}

TEST_CASE("matmul of ones gives row sums") {
  auto r = matmul(Tensor::full({2, 3}, 1.0), Tensor::full({3, 1}, 1.0));
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.to_vector() == std::vector<double>{3.0, 3.0});
}

TEST_CASE("relu clips negatives") {
  CHECK(relu(Tensor::vector({-1, 0, 2})).to_vector() == std::vector<double>{0, 0, 2});
}

TEST_CASE("shape mismatch names the op and both shapes") {
  try {
    add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("scalar operands broadcast, others do not") {
  auto r = mul(Tensor::vector({1, 2, 3}), Tensor::scalar(2.0));
  CHECK(r.to_vector() == std::vector<double>{2, 4, 6});
  CHECK_THROWS_AS(mul(Tensor::zeros({2, 1}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("gradient of sum is ones") {
  Tensor x = Tensor::vector({0.3, -1.0, 2.0}, true);
  backward(sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});
}

TEST_CASE("gradient of mean of squares is 2x/n") {
  Tensor x = Tensor::vector({1, 2}, true);
  backward(scale(sum(x * x), 0.5));
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::vector({1, 2}, true);
  CHECK_THROWS_AS(backward(x * x), ShapeError);
}

TEST_CASE("unreachable leaves get no gradient") {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor y = Tensor::vector({3, 4}, true);
  auto grads = backward(sum(x));
  CHECK(grads.count(x.id()) == 1);
  CHECK(grads.count(y.id()) == 0);
  CHECK(y.grad().empty());
}

TEST_CASE("backward twice accumulates exactly double; reset makes runs identical") {
  Tensor x = random_tensor({5}, 3);
  x = Tensor(x.shape(), x.to_vector(), true);
  auto f = [&] { return sum(exp(x) * x); };
  backward(f());
  std::vector<double> once(x.grad().begin(), x.grad().end());
  backward(f());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
  x.zero_grad();
  backward(f());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == once[i]);
}

TEST_CASE("ops do not mutate their inputs") {
  Tensor a = random_tensor({3, 4}, 1);
  Tensor b = random_tensor({4, 2}, 2);
  const auto a0 = a.to_vector(), b0 = b.to_vector();
  (void)matmul(a, b);
  (void)relu(a);
  (void)clamp(a, -0.1, 0.1);
  CHECK(a.to_vector() == a0);
  CHECK(b.to_vector() == b0);
}

TEST_CASE("grad_check is exact for a linear function") {
  auto r = grad_check([](const Tensor& x) { return sum(x); }, random_tensor({7}, 4));
  CHECK(r.max_rel_error < 1e-10);
  CHECK(r.checked == 7);
}

TEST_CASE("grad_check excludes coordinates at a clamp kink") {
  Tensor x = Tensor::vector({0.5, 1.0, -0.2});
  auto r = grad_check([](const Tensor& t) { return sum(clamp(t, -1.0, 1.0) * t); }, x);
  REQUIRE(r.excluded.size() == 1);
  CHECK(r.excluded[0] == 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check rejects non-finite values") {
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return sum(log(t)); }, Tensor::vector({-1.0, 1.0})),
                  std::domain_error);
}

TEST_CASE("every primitive passes the finite-difference check") {
  const Tensor pos = random_tensor({3, 4}, 10, 0.5, 2.0);
  const Tensor other = random_tensor({3, 4}, 11, 0.5, 2.0);
  const Tensor right = random_tensor({4, 2}, 12);
  const Tensor w = random_tensor({2, 3, 3}, 13);
  const Tensor bias = random_tensor({2}, 14);
  struct Case {
    const char* name;
    ScalarFn f;
  };
  const std::vector<Case> cases = {
      {"add", [&](const Tensor& x) { return sum((x + other) * x); }},
      {"sub", [&](const Tensor& x) { return sum((x - other) * x); }},
      {"mul", [&](const Tensor& x) { return sum(x * other * x); }},
      {"div", [&](const Tensor& x) { return sum(other / x); }},
      {"scale", [&](const Tensor& x) { return sum(scale(x * x, -1.7)); }},
      {"add_scalar", [&](const Tensor& x) { return sum(add_scalar(x, 0.3) * x); }},
      {"relu", [&](const Tensor& x) { return sum(relu(add_scalar(x, -1.2)) * x); }},
      {"log", [&](const Tensor& x) { return sum(log(x)); }},
      {"exp", [&](const Tensor& x) { return sum(exp(x)); }},
      {"sqrt", [&](const Tensor& x) { return sum(sqrt(x)); }},
      {"clamp", [&](const Tensor& x) { return sum(clamp(x, 0.8, 1.6) * x); }},
      {"matmul", [&](const Tensor& x) { auto y = matmul(x, right); return sum(y * y); }},
      {"conv1d", [&](const Tensor& x) { auto y = conv1d(x, w, bias, 2); return sum(y * y); }},
      {"sum_axis", [&](const Tensor& x) { auto y = sum_axis(x, 1); return sum(y * y); }},
      {"mean_axis", [&](const Tensor& x) { auto y = mean_axis(x, 0); return sum(y * y); }},
      {"std_axis", [&](const Tensor& x) { auto y = std_axis(x, 1); return sum(y * y); }},
      {"concat", [&](const Tensor& x) { auto y = concat({x, x * other}, 1); return sum(y * y); }},
      {"slice", [&](const Tensor& x) { auto y = slice(x, 1, 1, 3); return sum(y * y); }},
      {"transpose", [&](const Tensor& x) { return sum(matmul(transpose(x), x)); }},
      {"reshape", [&](const Tensor& x) { auto y = reshape(x, {2, 6}); return sum(y * y * y); }},
      {"expand", [&](const Tensor& x) { auto y = expand(slice(x, 1, 0, 1), {3, 5}); return sum(y * y); }},
      {"unfold", [&](const Tensor& x) { auto y = unfold(reshape(x, {12}), 4, 2); return sum(y * y); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    const auto r = grad_check(c.f, pos);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 0);
  }
}

TEST_CASE("random three-layer net passes the finite-difference check") {
  const Tensor w1 = random_tensor({6, 5}, 20), w2 = random_tensor({6, 6}, 21), w3 = random_tensor({1, 6}, 22);
  auto net = [&](const Tensor& x) {
    auto h = exp(scale(matmul(w1, reshape(x, {5, 1})), 0.5));
    h = sqrt(add_scalar(matmul(w2, h) * matmul(w2, h), 1.0));
    return sum(matmul(w3, h));
  };
  CHECK(grad_check(net, random_tensor({5}, 23)).max_rel_error < 1e-4);
}

TEST_CASE("std_axis of a constant row is finite with floored variance") {
  auto s = std_axis(Tensor::full({2, 4}, 3.0), 1);
  for (double v : s.to_vector()) CHECK(v == doctest::Approx(std::sqrt(kStdVarianceFloor)).epsilon(1e-12));
}
