#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include "csn/dataflow.hpp"
#include "doctest.h"

using namespace csn;

namespace {

VideoClip constant_clip(std::int64_t t, std::int64_t h, std::int64_t w, std::uint8_t v,
                        std::int64_t label = 0) {
  VideoClip clip;
  clip.label = label;
  clip.frames = TensorT<std::uint8_t>({1, 3, t, h, w}, v);
  return clip;
}

// Every pixel of frame t holds the value t, so a sampled clip reveals which
// source frames it came from.
VideoClip frame_coded_clip(std::int64_t t, std::int64_t h, std::int64_t w) {
  VideoClip clip = constant_clip(t, h, w, 0);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t f = 0; f < t; ++f)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
          clip.frames.at(0, c, f, y, x) = static_cast<std::uint8_t>(f);
  return clip;
}

std::int64_t decode_start(const Tensor5& clip) {
  const double pixel = clip.data[0] * kPixelStd + kPixelMean;
  return std::llround(pixel * 255.0);
}

double frame_value(std::uint8_t v) { return v / 255.0 - 0.5; }

}  // namespace

TEST_CASE("task spec validation") {
  CHECK_NOTHROW(default_task().validate());
  SynthTaskSpec bad = default_task();
  bad.motions.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = default_task();
  bad.motions[0].dir_w = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = default_task();
  bad.noise = 300;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("datasets are balanced, class-major and seed-deterministic") {
  SynthTaskSpec spec = default_task(11);
  spec.clips_per_class = 5;
  const auto a = gen_dataset(spec);
  const auto b = gen_dataset(spec);
  REQUIRE(a.size() == 20);
  CHECK(a == b);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].label == std::int64_t(i / 5));
  for (const auto& clip : a) CHECK(clip.frames.shape == Shape5{1, 3, 16, 64, 64});

  spec.seed = 12;
  CHECK_FALSE(gen_dataset(spec) == a);
}

TEST_CASE("split keeps classes balanced and order stable") {
  SynthTaskSpec spec = default_task(3);
  spec.clips_per_class = 10;
  const auto ds = gen_dataset(spec);
  const auto [train, eval] = split_dataset(ds, 0.2);
  REQUIRE(train.size() == 32);
  REQUIRE(eval.size() == 8);
  for (std::int64_t k = 0; k < 4; ++k) {
    const auto count = [k](const std::vector<VideoClip>& v) {
      return std::count_if(v.begin(), v.end(),
                           [k](const VideoClip& c) { return c.label == k; });
    };
    CHECK(count(train) == 8);
    CHECK(count(eval) == 2);
  }
  // the split preserves the original clip contents
  CHECK(train[0] == ds[0]);
  CHECK(eval[0] == ds[8]);
  CHECK_THROWS_AS(split_dataset(ds, 1.5), std::invalid_argument);
}

TEST_CASE("single frames carry no label signal; frame pairs carry it all") {
  SynthTaskSpec spec = default_task(29);
  spec.num_classes = 2;  // the right / left pair
  spec.motions = {{0, 1, 3.0, 0.0, 8.0}, {0, -1, 3.0, 0.0, 8.0}};
  spec.clips_per_class = 32;
  const auto ds = gen_dataset(spec);
  const auto [train, test] = split_dataset(ds, 0.25);
  REQUIRE(train.size() == 48);
  REQUIRE(test.size() == 16);

  // Logistic regression on shuffled single frames (green channel, stride-4
  // subsample). Majority vote per video should sit near chance because the
  // per-frame distributions of the two classes are identical.
  const std::int64_t kF = 16 * 16;
  std::vector<std::vector<double>> feats;
  std::vector<int> ys;
  Rng shuffle_rng(5);
  auto frame_features = [&](const VideoClip& v, std::int64_t t) {
    std::vector<double> f(kF + 1, 1.0);
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t x = 0; x < 16; ++x)
        f[y * 16 + x] = frame_value(v.frames.at(0, 1, t, y * 4, x * 4));
    return f;
  };
  auto shuffled_order = [&](std::int64_t t_full) {
    std::vector<std::int64_t> order(t_full);
    for (std::int64_t i = 0; i < t_full; ++i) order[i] = i;
    for (std::int64_t i = t_full - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.next_index(i + 1)]);
    return order;
  };
  for (const VideoClip& v : train)
    for (std::int64_t t : shuffled_order(v.t())) {
      feats.push_back(frame_features(v, t));
      ys.push_back(static_cast<int>(v.label));
    }

  std::vector<double> w(kF + 1, 0.0);
  for (int epoch = 0; epoch < 300; ++epoch) {
    std::vector<double> grad(kF + 1, 0.0);
    for (std::size_t i = 0; i < feats.size(); ++i) {
      double z = 0.0;
      for (std::int64_t j = 0; j <= kF; ++j) z += w[j] * feats[i][j];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double d = p - ys[i];
      for (std::int64_t j = 0; j <= kF; ++j) grad[j] += d * feats[i][j];
    }
    for (std::int64_t j = 0; j <= kF; ++j) w[j] -= 0.5 * grad[j] / double(feats.size());
  }

  int correct = 0;
  for (const VideoClip& v : test) {
    int votes = 0;
    for (std::int64_t t : shuffled_order(v.t())) {
      double z = 0.0;
      const auto f = frame_features(v, t);
      for (std::int64_t j = 0; j <= kF; ++j) z += w[j] * f[j];
      votes += z > 0 ? 1 : -1;
    }
    const int pred = votes > 0 ? 1 : 0;
    correct += pred == v.label;
  }
  const double frame_acc = double(correct) / double(test.size());
  CHECK(frame_acc >= 0.2);
  CHECK(frame_acc <= 0.8);

  // A temporal detector (correlation between frames two steps apart, over
  // integer shifts) separates the same pair easily.
  int temporal_correct = 0;
  for (const VideoClip& v : test) {
    int votes = 0;
    for (std::int64_t t = 0; t + 2 < v.t(); t += 2) {
      double best = -1e300;
      std::int64_t best_d = 0;
      for (std::int64_t d = -8; d <= 8; ++d) {
        double s = 0.0;
        for (std::int64_t y = 0; y < v.h(); ++y)
          for (std::int64_t x = 0; x < v.w(); ++x) {
            const std::int64_t xs = (x + d + v.w()) % v.w();
            s += (v.frames.at(0, 1, t, y, x) - 128.0) *
                 (v.frames.at(0, 1, t + 2, y, xs) - 128.0);
          }
        if (s > best) {
          best = s;
          best_d = d;
        }
      }
      votes += (best_d > 0) - (best_d < 0);
    }
    temporal_correct += (votes > 0 ? 0 : 1) == v.label;
  }
  CHECK(double(temporal_correct) / double(test.size()) >= 0.9);
}

TEST_CASE("bilinear resize basics") {
  TensorT<float> ramp({1, 1, 1, 1, 8}, 0.0f);
  for (std::int64_t x = 0; x < 8; ++x) ramp.at(0, 0, 0, 0, x) = 2.0f * float(x);

  const auto same = resize_bilinear(ramp, 1, 8);
  for (std::int64_t x = 0; x < 8; ++x) CHECK(same.at(0, 0, 0, 0, x) == ramp.at(0, 0, 0, 0, x));

  // doubling a linear ramp stays linear away from the clamped edges
  const auto up = resize_bilinear(ramp, 1, 16);
  for (std::int64_t x = 1; x < 15; ++x)
    CHECK(up.at(0, 0, 0, 0, x) == doctest::Approx(float(x) - 0.5f).epsilon(1e-6));

  TensorT<float> four({1, 1, 1, 4, 4}, 0.0f);
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) four.at(0, 0, 0, y, x) = float(4 * y + x);
  const auto down = resize_bilinear(four, 2, 2);
  CHECK(down.at(0, 0, 0, 0, 0) == doctest::Approx(2.5));   // mean of the top-left block
  CHECK(down.at(0, 0, 0, 0, 1) == doctest::Approx(4.5));
  CHECK(down.at(0, 0, 0, 1, 0) == doctest::Approx(10.5));
  CHECK(down.at(0, 0, 0, 1, 1) == doctest::Approx(12.5));

  const auto flat = resize_bilinear(TensorT<float>({1, 2, 3, 5, 7}, 3.25f), 11, 4);
  for (float v : flat.data) CHECK(v == 3.25f);
}

TEST_CASE("normalization is invertible") {
  Rng rng(3);
  Tensor5 x({1, 3, 2, 4, 4}, 0.0f);
  for (auto& v : x.data) v = rng.next_float();
  const Tensor5 round = denormalize(normalize(x));
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(round.data[i] - x.data[i]) < 1e-6);
  const Tensor5 other = normalize(denormalize(x));
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(other.data[i] - x.data[i]) < 1e-5);
}

TEST_CASE("train sampling contract") {
  SampleSpec sample;  // desk defaults: T=4 skip=2 scale [36,48] crop 32
  const VideoClip video = frame_coded_clip(16, 64, 64);
  Rng rng(0);

  const Tensor5 clip = sample_train_clip(video, sample, rng);
  CHECK(clip.shape == Shape5{1, 3, 4, 32, 32});

  // start index spans exactly [0, T_full - clip_len*skip]
  SampleSpec identity = sample;
  identity.s_min = identity.s_max = 64;
  identity.crop = 64;
  std::set<std::int64_t> starts;
  for (int i = 0; i < 300; ++i) starts.insert(decode_start(sample_train_clip(video, identity, rng)));
  CHECK(*starts.begin() == 0);
  CHECK(*starts.rbegin() == 8);
  CHECK(starts.size() == 9);
}

TEST_CASE("degenerate train sampling is seed independent") {
  SampleSpec sample;
  sample.clip_len = 4;
  sample.skip = 2;
  sample.s_min = sample.s_max = 40;
  sample.crop = 40;
  const VideoClip video = frame_coded_clip(8, 64, 64);  // span 0: only start 0
  Rng a(1), b(99);
  const Tensor5 ca = sample_train_clip(video, sample, a);
  const Tensor5 cb = sample_train_clip(video, sample, b);
  CHECK(ca.data == cb.data);
}

TEST_CASE("train sampling normalizes pixels") {
  SampleSpec sample;
  const VideoClip video = constant_clip(16, 64, 64, 127);
  Rng rng(4);
  const Tensor5 clip = sample_train_clip(video, sample, rng);
  const float expect = (127.0f / 255.0f - kPixelMean) / kPixelStd;
  for (float v : clip.data) CHECK(v == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("sampling rejects too-short videos and bad specs") {
  SampleSpec sample;
  Rng rng(0);
  CHECK_THROWS_AS(sample_train_clip(constant_clip(7, 64, 64, 0), sample, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_eval_clips(constant_clip(7, 64, 64, 0), sample),
                  std::invalid_argument);
  SampleSpec bad;
  bad.crop = 40;  // exceeds s_min
  CHECK_THROWS_AS(sample_train_clip(constant_clip(16, 64, 64, 0), bad, rng),
                  std::invalid_argument);
  bad = SampleSpec{};
  bad.s_min = 50;
  bad.s_max = 40;
  CHECK_THROWS_AS(sample_train_clip(constant_clip(16, 64, 64, 0), bad, rng),
                  std::invalid_argument);
}

TEST_CASE("crop bounds hold for fuzzed configurations") {
  Rng rng(2024);
  int accepted = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t h = 8 + rng.next_index(80);
    const std::int64_t w = 8 + rng.next_index(80);
    const std::int64_t t = 1 + rng.next_index(24);
    SampleSpec sample;
    sample.clip_len = 1 + rng.next_index(4);
    sample.skip = 1 + rng.next_index(3);
    sample.s_min = 4 + rng.next_index(60);
    sample.s_max = sample.s_min + rng.next_index(16);
    sample.crop = 1 + rng.next_index(70);
    const VideoClip video = constant_clip(t, h, w, 90);
    try {
      const Tensor5 clip = sample_train_clip(video, sample, rng);
      ++accepted;
      CHECK(clip.shape == Shape5{1, 3, sample.clip_len, sample.crop, sample.crop});
      for (float v : clip.data) CHECK(std::isfinite(v));
    } catch (const std::invalid_argument&) {
      // rejected configs must be genuinely invalid
      const bool invalid = sample.crop > sample.s_min || t < sample.clip_len * sample.skip;
      CHECK(invalid);
    }
  }
  CHECK(accepted > 10);
}

TEST_CASE("eval sampling spaces starts evenly and center-crops") {
  SampleSpec sample;
  sample.s_min = sample.s_max = 36;
  sample.crop = 36;
  const VideoClip video = frame_coded_clip(98, 36, 36);  // span 98 - 8 = 90
  const auto clips = sample_eval_clips(video, sample, 10);
  REQUIRE(clips.size() == 10);
  for (std::int64_t i = 0; i < 10; ++i) {
    CHECK(clips[std::size_t(i)].shape == Shape5{1, 3, 4, 36, 36});
    CHECK(decode_start(clips[std::size_t(i)]) == 10 * i);
  }
  CHECK(decode_start(sample_eval_clips(video, sample, 1)[0]) == 45);
}

TEST_CASE("eval clips of a static video are identical") {
  SampleSpec sample;
  SynthTaskSpec spec = default_task(8);
  spec.clips_per_class = 1;
  VideoClip video = gen_dataset(spec)[0];
  for (std::int64_t c = 0; c < 3; ++c)  // freeze every frame to frame 0
    for (std::int64_t t = 1; t < video.t(); ++t)
      for (std::int64_t y = 0; y < video.h(); ++y)
        for (std::int64_t x = 0; x < video.w(); ++x)
          video.frames.at(0, c, t, y, x) = video.frames.at(0, c, 0, y, x);
  const auto clips = sample_eval_clips(video, sample, 10);
  for (const auto& clip : clips) CHECK(clip.data == clips[0].data);
}

TEST_CASE("eval sampling matches the manual pipeline") {
  SampleSpec sample;
  SynthTaskSpec spec = default_task(21);
  spec.clips_per_class = 1;
  const VideoClip video = gen_dataset(spec)[0];
  const auto clips = sample_eval_clips(video, sample, 3);

  // clip 0 starts at frame 0: scale short edge to s_min, center crop, normalize
  TensorT<float> stack({1, 3, 4, 64, 64}, 0.0f);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t y = 0; y < 64; ++y)
        for (std::int64_t x = 0; x < 64; ++x)
          stack.at(0, c, i, y, x) = float(video.frames.at(0, c, i * 2, y, x));
  const auto scaled = resize_bilinear(stack, 36, 36);
  Tensor5 expect({1, 3, 4, 32, 32}, 0.0f);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t t = 0; t < 4; ++t)
      for (std::int64_t y = 0; y < 32; ++y)
        for (std::int64_t x = 0; x < 32; ++x)
          expect.at(0, c, t, y, x) = scaled.at(0, c, t, y + 2, x + 2) / 255.0f;
  expect = normalize(expect);
  CHECK(clips[0].data == expect.data);
}

TEST_CASE("clip files round-trip byte-exactly") {
  const std::string dir = "dataflow_test_tmp";
  std::filesystem::create_directories(dir);
  SynthTaskSpec spec = default_task(33);
  spec.clips_per_class = 1;
  const VideoClip clip = gen_dataset(spec)[1];

  const std::string path = dir + "/clip.csnv";
  write_clip(path, clip);
  CHECK(read_clip(path) == clip);

  write_clip(dir + "/clip2.csnv", clip);
  std::ifstream f1(path, std::ios::binary), f2(dir + "/clip2.csnv", std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  std::filesystem::remove_all(dir);
}

TEST_CASE("clip files reject damage") {
  const std::string dir = "dataflow_test_tmp2";
  std::filesystem::create_directories(dir);
  const VideoClip clip = constant_clip(2, 4, 4, 9, 1);
  const std::string path = dir + "/clip.csnv";
  write_clip(path, clip);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto rewrite = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), std::streamsize(b.size()));
  };

  rewrite("XSNV" + bytes.substr(4));
  CHECK_THROWS_WITH_AS(read_clip(path), doctest::Contains("bad magic"), std::runtime_error);
  rewrite(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_WITH_AS(read_clip(path), doctest::Contains("truncated"), std::runtime_error);
  rewrite("");
  CHECK_THROWS_WITH_AS(read_clip(path), doctest::Contains("truncated"), std::runtime_error);
  rewrite(bytes + "x");
  CHECK_THROWS_WITH_AS(read_clip(path), doctest::Contains("trailing"), std::runtime_error);
  std::string vbump = bytes;
  vbump[4] = 2;
  rewrite(vbump);
  CHECK_THROWS_WITH_AS(read_clip(path), doctest::Contains("version"), std::runtime_error);

  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset directories round-trip through the manifest") {
  const std::string dir = "dataflow_test_tmp3";
  SynthTaskSpec spec = default_task(17);
  spec.clips_per_class = 2;
  const auto ds = gen_dataset(spec);
  write_dataset(dir, ds, spec);
  CHECK(std::filesystem::exists(dir + "/manifest.json"));
  CHECK(load_dataset(dir) == ds);
  CHECK_THROWS_AS(load_dataset("no_such_dir_anywhere"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
