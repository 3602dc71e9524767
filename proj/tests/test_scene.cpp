// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "cfcap/scene.hpp"

using namespace cfcap;

TEST_SUITE("scene") {
  TEST_CASE("image construction checks shape and ids") {
    CHECK_THROWS_AS(SceneImage(2, 2, {0, 0, 0}), InputError);
    CHECK_THROWS_AS(SceneImage(0, 2, {}), InputError);
    SceneImage img(2, 2, {0, 1, 2, 5});
    CHECK_NOTHROW(img.validate(6));
    CHECK_THROWS_AS(img.validate(5), InputError);
    CHECK(img.at(1, 1) == 5);
  }

  TEST_CASE("masking touches only the region and leaves the input intact") {
    SceneImage img(2, 3, {2, 3, 0, 4, 4, 0});
    const std::vector<int> region{3, 4};
    const SceneImage m = img.masked(region);
    CHECK(img.at(3) == 4);
    for (int i = 0; i < 6; ++i) {
      if (i == 3 || i == 4) {
        CHECK(m.at(i) == kMaskCell);
      } else {
        CHECK(m.at(i) == img.at(i));
      }
    }
    CHECK_THROWS_AS(img.masked(std::vector<int>{6}), InputError);
  }

  TEST_CASE("caption span validation") {
    CaptionSample s;
    s.tokens = {1, 7, 2, 1, 8, 3, 0};
    s.spans = {{1, 1, {0}}, {4, 1, {3}}};
    CHECK_NOTHROW(s.validate(9));

    auto bad = s;
    bad.spans[1] = {6, 2, {3}};
    CHECK_THROWS_AS(bad.validate(9), InputError);  // past the end

    bad = s;
    bad.spans[1] = {1, 1, {3}};
    CHECK_THROWS_AS(bad.validate(9), InputError);  // overlap

    bad = s;
    bad.tokens[4] = 7;
    CHECK_THROWS_AS(bad.validate(9), InputError);  // duplicate surface form

    bad = s;
    bad.spans[0].cells = {};
    CHECK_THROWS_AS(bad.validate(9), InputError);

    bad = s;
    bad.spans[0].cells = {9};
    CHECK_THROWS_AS(bad.validate(9), InputError);
  }

  TEST_CASE("counterfactual sample validation") {
    CounterfactualSample s;
    s.factual_image = SceneImage(2, 2, {2, 0, 3, 0});
    s.factual_caption.tokens = {1, 7, 2, 1, 8, 3, 0};
    s.factual_caption.spans = {{1, 1, {0}}, {4, 1, {2}}};
    s.target_span = 1;
    s.cf_image = s.factual_image.masked(std::vector<int>{2});
    s.cf_caption = {1, 7, 3, 0};
    CHECK_NOTHROW(s.validate(0));
    CHECK(s.target_tokens()[0] == 8);

    auto bad = s;
    bad.target_span = 2;
    CHECK_THROWS_AS(bad.validate(0), InputError);

    bad = s;
    bad.cf_image.set(1, kMaskCell);  // masked outside the target region
    CHECK_THROWS_AS(bad.validate(0), InputError);

    bad = s;
    bad.cf_caption = {};
    CHECK_THROWS_AS(bad.validate(0), InputError);

    bad = s;
    bad.cf_caption = {1, 0, 7, 0};
    CHECK_THROWS_AS(bad.validate(0), InputError);

    // A decode cut at the length limit has no trailing eos.
    auto truncated = s;
    truncated.cf_caption = {1, 7, 2, 1};
    CHECK_NOTHROW(truncated.validate(0));

    // Null intervention: the image is left unchanged.
    auto null_cf = s;
    null_cf.cf_image = s.factual_image;
    CHECK_NOTHROW(null_cf.validate(0));
  }
}
