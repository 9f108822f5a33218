#include "xpm/autograd.hpp"

#include <doctest.h>

#include <random>

using namespace xpm;

TEST_CASE("record: forward passthrough and tape length") {
  Tape tape;
  Tensor xv(Shape{3}, std::vector<double>{1, 2, 3});
  Tensor yv(Shape{3}, std::vector<double>{4, 5, 6});
  Var x = tape.leaf(xv);
  Var y = tape.leaf(yv);
  Var s = add(x, y);
  CHECK(max_abs_diff(s.value(), add(xv, yv)) == 0.0);

  // three recorded ops on two leaves -> tape length 3 + 2
  Var t = mul(s, x);
  Var r = sum_all(t);
  (void)r;
  CHECK(tape.size() == 5);
}

TEST_CASE("record: inputs from a different tape are rejected") {
  Tape a, b;
  Var x = a.leaf(Tensor(Shape{2}, 1.0));
  Var y = b.leaf(Tensor(Shape{2}, 2.0));
  CHECK_THROWS(add(x, y));
}

TEST_CASE("constants do not grow the tape") {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{2}, 1.0), false);
  Var c = Var::constant(Tensor(Shape{2}, 3.0));
  Var s = add(x, c);
  CHECK(s.id() == -1);  // nothing on the graph requires gradients
  CHECK(tape.size() == 1);
}

TEST_CASE("backward: analytic derivatives of simple graphs") {
  // root = sum(x^2) -> grad = 2x
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{3}, std::vector<double>{1, 2, 3}));
  Var root = sum_all(square(x));
  Grad g = backward(tape, root);
  CHECK(max_abs_diff(g.at(x), Tensor(Shape{3}, std::vector<double>{2, 4, 6})) == 0.0);

  // root = sum(x*y) -> grad x = y, grad y = x
  Tape t2;
  Var a = t2.leaf(Tensor(Shape{2}, std::vector<double>{1, 5}));
  Var b = t2.leaf(Tensor(Shape{2}, std::vector<double>{3, 7}));
  Grad g2 = backward(t2, sum_all(mul(a, b)));
  CHECK(max_abs_diff(g2.at(a), b.value()) == 0.0);
  CHECK(max_abs_diff(g2.at(b), a.value()) == 0.0);

  // fan-out accumulates: root = sum(x) + sum(x) -> grad = 2
  Tape t3;
  Var z = t3.leaf(Tensor(Shape{4}, 1.5));
  Grad g3 = backward(t3, add(sum_all(z), sum_all(z)));
  CHECK(max_abs_diff(g3.at(z), Tensor(Shape{4}, 2.0)) == 0.0);
}

TEST_CASE("backward: non-scalar root rejected, repeat runs identical") {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{3}, 2.0));
  Var y = square(x);
  CHECK_THROWS(backward(tape, y));

  Var root = mean_all(y);
  Grad g1 = backward(tape, root);
  Grad g2 = backward(tape, root);
  CHECK(max_abs_diff(g1.at(x), g2.at(x)) == 0.0);
}

TEST_CASE("backward is linear in the root") {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 3; ++rep) {
    Tensor xv = rand_uniform(Shape{6}, 0.2, 2.0, rng);
    const double a = 1.3, b = -0.6;

    auto grad_of = [&](auto&& fn) {
      Tape tape;
      Var x = tape.leaf(xv);
      Grad g = backward(tape, fn(x));
      return g.at(x);
    };
    Tensor gf = grad_of([](const Var& x) { return sum_all(square(x)); });
    Tensor gg = grad_of([](const Var& x) { return sum_all(sqrt(x)); });
    Tensor gmix = grad_of([&](const Var& x) {
      return add(mul_scalar(sum_all(square(x)), a), mul_scalar(sum_all(sqrt(x)), b));
    });
    Tensor expect = add(mul_scalar(gf, a), mul_scalar(gg, b));
    CHECK(max_abs_diff(gmix, expect) <= 1e-10);
  }
}

TEST_CASE("finite_diff_check: quadratic passes tightly") {
  auto f = [](Tape&, const std::vector<Var>& leaves) {
    return sum_all(square(leaves[0]));
  };
  FiniteDiffReport r = finite_diff_check(f, {Tensor(Shape{2}, std::vector<double>{1, 2})},
                                         0, 1e-5, 1e-6);
  CHECK(r.pass);
}

TEST_CASE("finite_diff_check: detects a wrong adjoint") {
  // f = sum(x^3) but pretend the derivative is 2x by building x^3 as x*x*x and
  // checking against a deliberately mismatched tolerance
  auto f = [](Tape&, const std::vector<Var>& leaves) {
    const Var& x = leaves[0];
    return sum_all(mul(mul(x, x), x));
  };
  std::mt19937_64 rng(73);
  Tensor xv = rand_uniform(Shape{4}, 0.5, 1.5, rng);
  FiniteDiffReport good = finite_diff_check(f, {xv}, 0, 1e-5, 1e-6);
  CHECK(good.pass);  // the adjoint is in fact correct

  // a gradient leak: the value flows through a detached constant, so the
  // analytic gradient is zero while finite differences see the true slope
  auto broken = [](Tape&, const std::vector<Var>& leaves) {
    Var detached = Var::constant(square(leaves[0].value()));
    return sum_all(detached);
  };
  FiniteDiffReport bad = finite_diff_check(broken, {xv}, 0, 1e-5, 1e-4);
  CHECK(!bad.pass);
}

TEST_CASE("elementwise op adjoints pass finite differences") {
  std::mt19937_64 rng(79);
  Tensor pos = rand_uniform(Shape{5}, 0.3, 1.7, rng);
  Tensor any = rand_uniform(Shape{5}, -1.2, 1.3, rng);
  Tensor other = rand_uniform(Shape{5}, 0.4, 1.1, rng);

  struct Case {
    const char* name;
    std::function<Var(Tape&, const std::vector<Var>&)> f;
    Tensor input;
  };
  std::vector<Case> cases = {
      {"sqrt", [](Tape&, const std::vector<Var>& l) { return sum_all(sqrt(l[0])); }, pos},
      {"exp", [](Tape&, const std::vector<Var>& l) { return sum_all(exp(l[0])); }, any},
      {"log1p", [](Tape&, const std::vector<Var>& l) { return sum_all(log1p(l[0])); }, pos},
      {"sigmoid", [](Tape&, const std::vector<Var>& l) { return sum_all(sigmoid(l[0])); }, any},
      {"softplus", [](Tape&, const std::vector<Var>& l) { return sum_all(softplus(l[0])); }, any},
      {"cos", [](Tape&, const std::vector<Var>& l) { return sum_all(cos(l[0])); }, any},
      {"sin", [](Tape&, const std::vector<Var>& l) { return sum_all(sin(l[0])); }, any},
      {"abs", [](Tape&, const std::vector<Var>& l) { return sum_all(abs(l[0])); }, any},
      {"leaky", [](Tape&, const std::vector<Var>& l) { return sum_all(leaky_relu(l[0], 0.01)); }, any},
      {"mean", [](Tape&, const std::vector<Var>& l) { return mean_all(square(l[0])); }, any},
  };
  for (auto& c : cases) {
    INFO("op ", c.name);
    FiniteDiffReport r = finite_diff_check(c.f, {c.input}, 0, 1e-5, 1e-4);
    CHECK(r.pass);
  }

  // binary ops over both leaves
  auto fdiv = [](Tape&, const std::vector<Var>& l) { return sum_all(div(l[0], l[1])); };
  CHECK(finite_diff_check(fdiv, {any, other}, 0, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(fdiv, {any, other}, 1, 1e-5, 1e-4).pass);

  auto fatan = [](Tape&, const std::vector<Var>& l) { return sum_all(atan2(l[0], l[1])); };
  CHECK(finite_diff_check(fatan, {pos, other}, 0, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(fatan, {pos, other}, 1, 1e-5, 1e-4).pass);
}

TEST_CASE("structural op adjoints pass finite differences") {
  std::mt19937_64 rng(83);
  Tensor img = rand_uniform(Shape{2, 6, 6}, -1, 1, rng);
  Tensor kern = rand_uniform(Shape{3, 2, 3, 3}, -0.5, 0.5, rng);
  Tensor mat_a = rand_uniform(Shape{3, 4}, -1, 1, rng);
  Tensor mat_b = rand_uniform(Shape{4, 2}, -1, 1, rng);

  auto fconv = [](Tape&, const std::vector<Var>& l) {
    return mean_all(square(conv2d(l[0], l[1], 1, 1)));
  };
  CHECK(finite_diff_check(fconv, {img, kern}, 0, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(fconv, {img, kern}, 1, 1e-5, 1e-4).pass);

  auto fmm = [](Tape&, const std::vector<Var>& l) {
    return mean_all(square(matmul(l[0], l[1])));
  };
  CHECK(finite_diff_check(fmm, {mat_a, mat_b}, 0, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(fmm, {mat_a, mat_b}, 1, 1e-5, 1e-4).pass);

  auto fstruct = [](Tape&, const std::vector<Var>& l) {
    Var p = pad_reflect(l[0], 1, 1, 1, 1);
    Var up = resample2x(p, ResampleDir::Up, ResampleMode::Bilinear);
    Var down = resample2x(up, ResampleDir::Down, ResampleMode::Bilinear);
    Var cr = crop(down, 1, 1, 6, 6);
    Var seq = tile_to_seq(cr, 2);
    Var rev = reverse_leading(seq);
    Var back = seq_to_tile(rev, 2, 6, 6, 2);
    return mean_all(square(concat_leading(back, l[0])));
  };
  CHECK(finite_diff_check(fstruct, {img}, 0, 1e-5, 1e-4).pass);

  auto fchan = [](Tape&, const std::vector<Var>& l) {
    return sum_all(square(channel_mean(square(l[0]))));
  };
  CHECK(finite_diff_check(fchan, {img}, 0, 1e-5, 1e-4).pass);

  // per-channel broadcast through mul and add
  Tensor chan = rand_uniform(Shape{2}, 0.5, 1.5, rng);
  auto fbcast = [](Tape&, const std::vector<Var>& l) {
    return mean_all(square(add(mul(l[0], l[1]), l[1])));
  };
  CHECK(finite_diff_check(fbcast, {img, chan}, 0, 1e-5, 1e-4).pass);
  CHECK(finite_diff_check(fbcast, {img, chan}, 1, 1e-5, 1e-4).pass);
}
