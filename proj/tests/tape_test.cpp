#include <doctest.h>

#include <cmath>
#include <cstring>

#include "simref/grad_check.hpp"
#include "simref/net_params.hpp"
#include "simref/rng.hpp"
#include "simref/tape.hpp"

using namespace simref;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, float scale = 1.0f) {
  Pcg32 rng(seed);
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

// Independent quintuple-loop convolution reference. Deliberately naive: this
// is the oracle the fast path is judged against.
Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor* bias, int stride,
                        int pad) {
  int N = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
  int O = w.dim(0), K = w.dim(2);
  int Ho = (H + 2 * pad - K) / stride + 1;
  int Wo = (W + 2 * pad - K) / stride + 1;
  Tensor out({(uint32_t)N, (uint32_t)O, (uint32_t)Ho, (uint32_t)Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int i = 0; i < I; ++i)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                int y = oy * stride - pad + ky;
                int xx = ox * stride - pad + kx;
                if (y >= 0 && y < H && xx >= 0 && xx < W) {
                  acc += (double)x.at4(n, i, y, xx) * (double)w.at4(o, i, ky, kx);
                }
              }
          out.at4(n, o, oy, ox) = (float)acc;
        }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs((double)a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("tape") {
  TEST_CASE("conv2d identity kernel reproduces the input") {
    Tensor x = random_tensor({1, 1, 3, 3}, 1);
    Tensor w({1, 1, 1, 1}, {1.0f});
    Tape t;
    Value y = conv2d(t.input(x), t.input(w), 1, 0);
    CHECK(y.tensor().bit_equal(x));
  }

  TEST_CASE("conv2d all-zero kernel gives all-zero output") {
    Tensor x = random_tensor({2, 3, 5, 5}, 2);
    Tensor w({4, 3, 3, 3});
    Tape t;
    Value y = conv2d(t.input(x), t.input(w), 1, 1);
    for (size_t i = 0; i < y.tensor().numel(); ++i) CHECK(y.tensor()[i] == 0.0f);
  }

  TEST_CASE("conv2d matches the nested-loop oracle (spec example)") {
    Tensor x = random_tensor({2, 3, 8, 8}, 3);
    Tensor w = random_tensor({4, 3, 3, 3}, 4, 0.5f);
    Tensor b = random_tensor({4}, 5, 0.1f);
    Tape t;
    Value y = conv2d(t.input(x), t.input(w), t.input(b), 2, 1);
    Tensor ref = conv2d_reference(x, w, &b, 2, 1);
    CHECK(max_abs_diff(y.tensor(), ref) < 1e-5);
  }

  TEST_CASE("conv2d matches the oracle on 50 random shape/stride/pad combinations") {
    Pcg32 rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      uint32_t N = 1 + rng.uniform_below(3);
      uint32_t I = 1 + rng.uniform_below(4);
      uint32_t O = 1 + rng.uniform_below(5);
      uint32_t K = 1 + 2 * rng.uniform_below(3);  // 1, 3, 5
      int stride = 1 + (int)rng.uniform_below(3);
      int pad = (int)rng.uniform_below(3);
      uint32_t H = K + rng.uniform_below(10);
      uint32_t W = K + rng.uniform_below(10);

      Tensor x = random_tensor({N, I, H, W}, 1000 + trial);
      Tensor w = random_tensor({O, I, K, K}, 2000 + trial, 0.5f);
      Tensor b = random_tensor({O}, 3000 + trial, 0.1f);
      Tape t;
      Value y = conv2d(t.input(x), t.input(w), t.input(b), stride, pad);
      Tensor ref = conv2d_reference(x, w, &b, stride, pad);
      CAPTURE(trial);
      CHECK(max_abs_diff(y.tensor(), ref) < 1e-5);
    }
  }

  TEST_CASE("conv2d shape mismatch reports both shapes") {
    Tensor x = random_tensor({1, 2, 5, 5}, 6);
    Tensor w = random_tensor({3, 4, 3, 3}, 7);
    Tape t;
    try {
      conv2d(t.input(x), t.input(w), 1, 1);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      std::string msg = e.what();
      CHECK(msg.find("[1x2x5x5]") != std::string::npos);
      CHECK(msg.find("[3x4x3x3]") != std::string::npos);
    }
  }

  TEST_CASE("backward: loss = sum(p) gives all-ones gradient") {
    NetParams params("test");
    Tensor& p = params.add("p", random_tensor({2, 3}, 8));
    Tape t;
    Value loss = sum(t.leaf(p));
    t.backward(loss);
    for (float g : p.grad()) CHECK(g == 1.0f);
  }

  TEST_CASE("backward: loss independent of p gives zero gradient") {
    NetParams params("test");
    Tensor& p = params.add("p", random_tensor({3}, 9));
    Tensor& q = params.add("q", random_tensor({3}, 10));
    Tape t;
    Value lp = t.leaf(p);  // on the tape but not on the loss path
    Value loss = sum(t.leaf(q));
    t.backward(loss);
    CHECK(lp.valid());
    CHECK_FALSE(p.has_grad());  // never reached by backward
    for (float g : q.grad()) CHECK(g == 1.0f);
  }

  TEST_CASE("backward twice without a new forward is an error") {
    NetParams params("test");
    Tensor& p = params.add("p", random_tensor({3}, 11));
    Tape t;
    Value loss = sum(t.leaf(p));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), NumericError);
  }

  TEST_CASE("relu backward masks exactly on input sign (0 maps to 0)") {
    NetParams params("test");
    Tensor& p = params.add("p", Tensor({5}, {-1.0f, 0.0f, 2.0f, -0.5f, 3.0f}));
    Tape t;
    Value loss = sum(relu(t.leaf(p)));
    t.backward(loss);
    const auto& g = p.grad();
    CHECK(g[0] == 0.0f);
    CHECK(g[1] == 0.0f);  // subgradient at 0 is 0
    CHECK(g[2] == 1.0f);
    CHECK(g[3] == 0.0f);
    CHECK(g[4] == 1.0f);
  }

  TEST_CASE("grad_check: quadratic loss is exact to roundoff") {
    NetParams params("test");
    params.add("p", random_tensor({6}, 12));
    auto build = [&](Tape& t) {
      Value v = t.leaf(params.at("p"));
      return scale(sq_diff(v, t.input(Tensor({6}))), 0.5f);
    };
    CHECK(grad_check(build, params, 1e-3) < 1e-6);
  }

  TEST_CASE("grad_check: conv-relu-sum composite under 1e-3 (spec example)") {
    NetParams params("test");
    params.add("w", random_tensor({2, 1, 3, 3}, 13, 0.5f));
    params.add("b", random_tensor({2}, 14, 0.1f));
    Tensor x = random_tensor({1, 1, 5, 5}, 15);
    auto build = [&](Tape& t) {
      return sum(relu(conv2d(t.input(x), t.leaf(params.at("w")), t.leaf(params.at("b")), 1, 0)));
    };
    CHECK(grad_check(build, params, 1e-3) < 1e-3);
  }

  TEST_CASE("grad_check: every differentiable op on randomized small tensors, 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      NetParams params("test");
      Tensor& a = params.add("a", random_tensor({2, 2, 6, 6}, 100 + seed, 0.8f));
      Tensor target = random_tensor({2, 2, 6, 6}, 200 + seed);
      Tensor& w = params.add("w", random_tensor({3, 2, 3, 3}, 400 + seed, 0.4f));
      Tensor& fw = params.add("fw", random_tensor({3, 3}, 500 + seed, 0.4f));
      Tensor& fb = params.add("fb", random_tensor({3}, 600 + seed, 0.1f));

      // exercise each op in one composite graph
      auto build_all = [&](Tape& t) {
        Value va = t.leaf(a);
        Value vt = t.input(target);

        Value conv = conv2d(va, t.leaf(w), 1, 1);          // conv2d
        Value act = relu(conv);                            // relu
        Value pooled = maxpool(act, 2, 2);                 // maxpool [2,3,3,3]
        Value dense = affine(reshape(avg_spatial(pooled), Shape{2, 3}),  // reshape + affine
                             t.leaf(fw), t.leaf(fb));

        Value two_ch = add(va, vt);                                   // add [2,2,6,6]
        Value probs = softmax2(two_ch);                               // softmax2
        Value lg = log(take_channel(probs, 0));                       // take_channel + log
        Value chan = avg_channel(two_ch);                             // avg_channel [2,1,6,6]
        // a plain sum over forward differences telescopes to exact zeros;
        // square them so every entry keeps a nonzero gradient
        Value diffs = sq_diff(spatial_diff(chan), t.input(Tensor({2, 2, 6, 6})));
        Value l1 = l1_diff(chan, take_channel(vt, 1));                // l1_diff
        Value sq = sq_diff(dense, t.input(Tensor({2, 3})));           // sq_diff + affine
        Value th = tanh(scale(chan, 0.3f, 0.1f));                     // tanh + scale

        Value parts = add(add(sum(lg), diffs), add(l1, sq));
        return add(parts, add(sum(th), scale(sum(act), 0.25f)));
      };
      CAPTURE(seed);
      CHECK(grad_check(build_all, params, 1e-3) < 1e-3);
    }
  }

  TEST_CASE("backward is deterministic: identical passes give bit-identical grads") {
    NetParams params("test");
    params.add("w", random_tensor({4, 2, 3, 3}, 16, 0.4f));
    Tensor x = random_tensor({2, 2, 8, 8}, 17);
    auto run = [&]() {
      Tape t;
      Value loss = sum(relu(conv2d(t.input(x), t.leaf(params.at("w")), 1, 1)));
      t.backward(loss);
      auto g = params.at("w").grad();
      params.at("w").clear_grad();
      return g;
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);
  }

  TEST_CASE("sgd_step applies p -= lr*grad and clears grads (spec examples)") {
    NetParams params("test");
    Tensor& p = params.add("p", Tensor({2}, {1.0f, 2.0f}));
    p.ensure_grad() = {1.0f, 1.0f};
    sgd_step(params, 0.5f);
    CHECK(p[0] == doctest::Approx(0.5f));
    CHECK(p[1] == doctest::Approx(1.5f));
    CHECK_FALSE(p.has_grad());

    SUBCASE("lr = 0 leaves params unchanged") {
      p.ensure_grad() = {5.0f, 5.0f};
      sgd_step(params, 0.0f);
      CHECK(p[0] == doctest::Approx(0.5f));
      CHECK(p[1] == doctest::Approx(1.5f));
    }
    SUBCASE("missing grad is an error") { CHECK_THROWS_AS(sgd_step(params, 0.1f), NumericError); }
  }

  TEST_CASE("sgd on a quadratic shrinks the distance monotonically") {
    NetParams params("test");
    Tensor& p = params.add("p", random_tensor({4}, 18));
    Tensor c = random_tensor({4}, 19);
    auto dist = [&]() {
      double d = 0;
      for (int i = 0; i < 4; ++i) d += (p[i] - c[i]) * (p[i] - c[i]);
      return std::sqrt(d);
    };
    double prev = dist();
    for (int step = 0; step < 100; ++step) {
      Tape t;
      Value loss = sq_diff(t.leaf(p), t.input(c));
      t.backward(loss);
      sgd_step(params, 0.1f);
      double now = dist();
      CHECK(now <= prev + 1e-7);
      prev = now;
    }
    CHECK(prev < 1e-3);
  }
}
