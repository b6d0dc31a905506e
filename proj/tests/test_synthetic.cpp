#include <doctest.h>

#include <chrono>

#include "semcom/guidance.hpp"
#include "semcom/synthetic.hpp"

using namespace semcom;

TEST_SUITE("synthetic") {
  TEST_CASE("every scene passes the mask-area band") {
    for (const auto& s : synthetic::generate_synthetic(200, 3)) {
      CHECK(guidance::mask_filter(s.mask));
      CHECK(s.image.height() == 64);
      CHECK(s.image.channels() == 3);
      CHECK_FALSE(s.query.empty());
    }
  }

  TEST_CASE("same seed gives identical bytes, other seeds differ") {
    const auto a = synthetic::generate_synthetic(20, 9);
    const auto b = synthetic::generate_synthetic(20, 9);
    const auto c = synthetic::generate_synthetic(20, 10);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].image.values().size() == b[i].image.values().size());
      CHECK(std::equal(a[i].image.values().begin(), a[i].image.values().end(), b[i].image.values().begin()));
      CHECK(a[i].mask == b[i].mask);
      CHECK(a[i].query == b[i].query);
      any_diff = any_diff || !(a[i].mask == c[i].mask);
    }
    CHECK(any_diff);
  }

  TEST_CASE("scene i does not depend on how many scenes are drawn") {
    const auto few = synthetic::generate_synthetic(3, 4);
    const auto many = synthetic::generate_synthetic(30, 4);
    CHECK(few[2].mask == many[2].mask);
  }

  TEST_CASE("1000 scenes generate in under a minute") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto scenes = synthetic::generate_synthetic(1000, 1);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(scenes.size() == 1000);
    CHECK(s < 60.0);
  }

  TEST_CASE("queries parse back to colour and shape") {
    const auto q = synthetic::parse_query("the red square");
    REQUIRE(q.color);
    CHECK(synthetic::palette()[*q.color].name == "red");
    REQUIRE(q.shape);
    CHECK(*q.shape == synthetic::ShapeKind::Square);
    CHECK_FALSE(synthetic::parse_query("the circle").color);
  }

  TEST_CASE("procedural classifier recognises single-shape scenes") {
    synthetic::SceneOptions options;
    options.max_shapes = 1;
    int correct = 0;
    const auto scenes = synthetic::generate_synthetic(100, 12, options);
    for (const auto& s : scenes) {
      const auto k = synthetic::classify_shape(s.image);
      correct += k && *k == s.shape;
    }
    CHECK(correct >= 95);
  }
}
