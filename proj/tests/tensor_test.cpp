#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "simref/rng.hpp"
#include "simref/tensor.hpp"
#include "simref/tensor_io.hpp"

using namespace simref;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "simref_tensor_test";
  fs::create_directories(p);
  return p;
}

Tensor random_tensor(Shape shape, uint64_t seed) {
  Pcg32 rng(seed);
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.gaussian();
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape/data invariants enforced") {
    CHECK_THROWS_AS(Tensor({2, 0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.all_finite());
  }

  TEST_CASE("grad slot lifecycle") {
    Tensor t({4});
    CHECK_FALSE(t.has_grad());
    CHECK_THROWS_AS(t.grad(), NumericError);
    t.ensure_grad();
    CHECK(t.has_grad());
    CHECK(t.grad().size() == 4);
    t.clear_grad();
    CHECK_FALSE(t.has_grad());
  }

  TEST_CASE("stack and unstack round trip") {
    std::vector<Tensor> imgs;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_tensor({1, 4, 5}, 10 + i));
    Tensor batch = stack_images(imgs);
    CHECK(batch.shape() == Shape{3, 1, 4, 5});
    auto back = unstack_images(batch);
    for (int i = 0; i < 3; ++i) CHECK(back[i].bit_equal(imgs[i]));
  }

  TEST_CASE("TNS1 round trip is bit exact") {
    auto dir = temp_dir();
    Tensor t = random_tensor({3, 2, 7}, 99);
    save_tns(t, dir / "t.tns");
    Tensor u = load_tns(dir / "t.tns");
    CHECK(u.bit_equal(t));
  }

  TEST_CASE("TNS1 rejects corruption") {
    auto dir = temp_dir();
    Tensor t = random_tensor({4, 4}, 7);
    save_tns(t, dir / "good.tns");

    SUBCASE("bad magic") {
      std::ofstream f(dir / "bad.tns", std::ios::binary);
      f << "NOPE" << std::string(60, '\0');
      f.close();
      CHECK_THROWS_AS(load_tns(dir / "bad.tns"), IoError);
    }
    SUBCASE("truncated payload") {
      auto bytes = fs::file_size(dir / "good.tns");
      fs::copy_file(dir / "good.tns", dir / "trunc.tns", fs::copy_options::overwrite_existing);
      fs::resize_file(dir / "trunc.tns", bytes - 5);
      CHECK_THROWS_AS(load_tns(dir / "trunc.tns"), IoError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_tns(dir / "absent.tns"), IoError); }
  }

  TEST_CASE("pcg32 determinism and serialization") {
    Pcg32 a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u32() == b.next_u32());

    uint64_t state = a.state(), inc = a.inc();
    std::vector<uint32_t> expect;
    for (int i = 0; i < 10; ++i) expect.push_back(a.next_u32());
    Pcg32 c = Pcg32::restore(state, inc);
    for (int i = 0; i < 10; ++i) CHECK(c.next_u32() == expect[i]);
  }

  TEST_CASE("sample_without_replacement draws distinct indices") {
    Pcg32 rng(5);
    auto idx = rng.sample_without_replacement(8, 8);
    std::vector<bool> seen(8, false);
    for (uint32_t i : idx) {
      CHECK_FALSE(seen[i]);
      seen[i] = true;
    }
  }
}
