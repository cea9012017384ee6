#include "doctest.h"
#include "helpers.hpp"
#include "wsr/tensor.hpp"

#include <cstdio>
#include <filesystem>

using namespace wsr;
using wsrtest::fd_max_rel_err;
using wsrtest::fill_uniform;

TEST_CASE("elementwise add/sub/mul basics") {
  auto a = Tensor<double>::from_values({2}, {1, 2});
  auto b = Tensor<double>::from_values({2}, {3, 4});
  CHECK(add<double>(nullptr, a, b).values()[0] == 4);
  CHECK(add<double>(nullptr, a, b).values()[1] == 6);
  CHECK(sub<double>(nullptr, b, a).values()[0] == 2);
  CHECK(mul<double>(nullptr, a, b).values()[1] == 8);
  CHECK(scale<double>(nullptr, a, 2.5).values()[1] == 5.0);
  CHECK(elementwise<double>(nullptr, EwOp::add, a, b).values()[0] == 4);
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_WITH_AS(add<double>(nullptr, a, b), doctest::Contains("[2x3]"), Error);
  CHECK_THROWS_WITH_AS(mul<double>(nullptr, a, b), doctest::Contains("[3x2]"), Error);
}

TEST_CASE("mul by zero tensor zeroes value and gradient") {
  auto x = Tensor<double>::from_values({3}, {1.5, -2, 0.25}, true);
  auto z = Tensor<double>::zeros({3});
  Tape<double> tape;
  auto y = mul(&tape, x, z);
  for (double v : y.values()) CHECK(v == 0.0);
  auto loss = reduce_sum(&tape, y);
  tape.backward(loss);
  for (double g : *tape.find_grad(x)) CHECK(g == 0.0);
}

TEST_CASE("grad of sum(mul(x,x)) matches finite differences") {
  auto x = Tensor<double>::from_values({1}, {3.0}, true);
  {
    Tape<double> tape;
    auto loss = reduce_sum(&tape, mul(&tape, x, x));
    tape.backward(loss);
    CHECK((*tape.find_grad(x))[0] == doctest::Approx(6.0).epsilon(1e-9));
  }
  const double err = fd_max_rel_err({x}, [&](Tape<double>* tp) {
    return reduce_sum(tp, mul(tp, x, x));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("matmul identity and hand arithmetic") {
  auto m = Tensor<double>::from_values({2, 2}, {5, 6, 7, 8});
  auto eye = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
  auto prod = matmul<double>(nullptr, eye, m);
  for (size_t i = 0; i < 4; ++i) CHECK(prod.values()[i] == m.values()[i]);

  auto a = Tensor<double>::from_values({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_values({2, 1}, {5, 6});
  auto c = matmul<double>(nullptr, a, b);
  CHECK(c.values()[0] == 17);
  CHECK(c.values()[1] == 39);

  CHECK_THROWS_AS(matmul<double>(nullptr, a, Tensor<double>::zeros({3, 2})), Error);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(7);
  auto a = Tensor<double>::zeros({3, 4}, true);
  auto b = Tensor<double>::zeros({4, 2}, true);
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  const double err = fd_max_rel_err({a, b}, [&](Tape<double>* tp) {
    return reduce_sum(tp, matmul(tp, a, b));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("mse basics and gradient") {
  auto x = Tensor<double>::from_values({2}, {0, 0});
  auto y = Tensor<double>::from_values({2}, {2, 2});
  CHECK(mse<double>(nullptr, x, x).item() == 0.0);
  CHECK(mse<double>(nullptr, x, y).item() == doctest::Approx(4.0));
  CHECK_THROWS_AS(mse<double>(nullptr, x, Tensor<double>::zeros({3})), Error);

  Rng rng(11);
  auto a = Tensor<double>::zeros({5}, true);
  auto b = Tensor<double>::zeros({5}, true);
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  const double err =
      fd_max_rel_err({a, b}, [&](Tape<double>* tp) { return mse(tp, a, b); });
  CHECK(err < 1e-4);
}

TEST_CASE("sum_sq_diff equals mse times element count") {
  Rng rng(3);
  auto a = Tensor<double>::zeros({7}, true);
  auto b = Tensor<double>::zeros({7});
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  CHECK(sum_sq_diff<double>(nullptr, a, b).item() ==
        doctest::Approx(7.0 * mse<double>(nullptr, a, b).item()).epsilon(1e-12));
  const double err =
      fd_max_rel_err({a}, [&](Tape<double>* tp) { return sum_sq_diff(tp, a, b); });
  CHECK(err < 1e-4);
}

TEST_CASE("backward of a constant graph is fine; leaf loss is rejected") {
  Tape<double> tape;
  auto c = Tensor<double>::from_values({3}, {1, 2, 3});
  auto loss = reduce_sum(&tape, c);
  tape.backward(loss);  // no parameters anywhere; must not throw
  CHECK(tape.find_grad(c) == nullptr);  // constants never get tape gradients
  CHECK(c.grad()[0] == 0.0);            // the accumulated view stays zero

  Tape<double> tape2;
  auto leaf = Tensor<double>::scalar(1.0);
  CHECK_THROWS_WITH_AS(tape2.backward(leaf), doctest::Contains("not on this tape"), Error);
  auto vec = Tensor<double>::zeros({2});
  Tape<double> tape3;
  auto nonscalar = add(&tape3, vec, vec);
  CHECK_THROWS_AS(tape3.backward(nonscalar), Error);
}

TEST_CASE("f(x) = sum(3x) gives all-3 gradient") {
  auto x = Tensor<double>::from_values({4}, {1, -1, 2, 0.5}, true);
  Tape<double> tape;
  auto loss = reduce_sum(&tape, scale(&tape, x, 3.0));
  tape.backward(loss);
  for (double g : *tape.find_grad(x)) CHECK(g == doctest::Approx(3.0));
}

TEST_CASE("shared subexpression accumulates additively vs duplicated graph") {
  Rng rng(21);
  auto x = Tensor<double>::zeros({6}, true);
  fill_uniform(x, rng);

  Tape<double> shared;
  auto y = mul(&shared, x, x);
  auto loss1 = reduce_sum(&shared, add(&shared, y, y));
  shared.backward(loss1);
  const std::vector<double> g_shared = *shared.find_grad(x);

  Tape<double> dup;
  auto y1 = mul(&dup, x, x);
  auto y2 = mul(&dup, x, x);
  auto loss2 = reduce_sum(&dup, add(&dup, y1, y2));
  dup.backward(loss2);
  const std::vector<double> g_dup = *dup.find_grad(x);

  CHECK(loss1.item() == doctest::Approx(loss2.item()).epsilon(1e-14));
  CHECK(wsrtest::max_abs_diff(g_shared, g_dup) < 1e-12);
}

TEST_CASE("forward results are deterministic bit for bit") {
  Rng rng(5);
  auto a = Tensor<float>::zeros({64}, false);
  auto b = Tensor<float>::zeros({64}, false);
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  auto r1 = mul<float>(nullptr, add<float>(nullptr, a, b), b);
  auto r2 = mul<float>(nullptr, add<float>(nullptr, a, b), b);
  for (int i = 0; i < 64; ++i) CHECK(r1.values()[i] == r2.values()[i]);
}

TEST_CASE("merge_into accumulates tape gradients into parameter buffers") {
  auto w = Tensor<double>::from_values({2}, {1, 2}, true);
  w.zero_grad();
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    auto loss = reduce_sum(&tape, mul(&tape, w, w));
    tape.backward(loss);
    const Tensor<double> params[] = {w};
    tape.merge_into(params);
  }
  CHECK(w.grad()[0] == doctest::Approx(4.0));  // 2w summed over two passes
  CHECK(w.grad()[1] == doctest::Approx(8.0));
}

TEST_CASE("non-finite op output is caught when finite checks are on") {
  const bool was = finite_checks_enabled();
  set_finite_checks(true);
  auto big = Tensor<float>::full({2}, 3e38f);
  Tape<float> tape;
  CHECK_THROWS_AS(add(&tape, big, big), Error);  // overflows to inf
  set_finite_checks(was);
}

TEST_CASE("reshape and concat_channels round gradients through") {
  Rng rng(9);
  auto a = Tensor<double>::zeros({2, 2, 2}, true);
  auto b = Tensor<double>::zeros({1, 2, 2}, true);
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  const double err = fd_max_rel_err({a, b}, [&](Tape<double>* tp) {
    const Tensor<double> parts[] = {a, b};
    auto cat = concat_channels<double>(tp, parts);
    auto flat = reshape(tp, cat, {12});
    return reduce_sum(tp, mul(tp, flat, flat));
  });
  CHECK(err < 1e-4);

  const Tensor<double> parts[] = {a, b};
  auto cat = concat_channels<double>(nullptr, parts);
  CHECK(cat.shape() == Shape{3, 2, 2});
  CHECK(cat.values()[0] == a.values()[0]);
  CHECK(cat.values()[8] == b.values()[0]);
}

TEST_CASE("tensor blob round-trips and rejects corruption") {
  auto t = Tensor<float>::from_values({2, 3}, {1.5f, -2.25f, 0.f, 1e-7f, 42.f, -0.5f});
  const auto blob = tensor_to_blob(t);
  CHECK(blob.size() == 8 + 8 + 24);
  CHECK(blob[0] == 'W');
  CHECK(blob[1] == 'S');
  CHECK(blob[2] == 'R');
  CHECK(blob[3] == '1');
  auto back = tensor_from_blob<float>(blob);
  CHECK(back.shape() == t.shape());
  for (int i = 0; i < 6; ++i) CHECK(back.values()[i] == t.values()[i]);

  auto truncated = blob;
  truncated.resize(blob.size() - 4);
  CHECK_THROWS_AS(tensor_from_blob<float>(truncated), Error);
  auto bad = blob;
  bad[0] = 'X';
  CHECK_THROWS_AS(tensor_from_blob<float>(bad), Error);

  const std::string path = (std::filesystem::temp_directory_path() / "wsr_t.wsr").string();
  save_tensor(t, path);
  auto loaded = load_tensor<float>(path);
  for (int i = 0; i < 6; ++i) CHECK(loaded.values()[i] == t.values()[i]);
  std::filesystem::remove(path);
}
