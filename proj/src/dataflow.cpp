#include "csn/dataflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "csn/common.hpp"
#include "json.hpp"

namespace csn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

struct Wave {
  int fx = 0, fy = 0;
  double phase = 0.0;
  double amp = 0.0;
};

// Four waves per channel. The first wave is forced to carry both axes so
// every clip has usable structure along its motion direction; frequencies
// stay at |f| <= 3 cycles per frame edge so the skip-2 sampling never
// aliases the displacement.
std::array<Wave, 4> draw_waves(Rng& rng) {
  std::array<Wave, 4> waves;
  for (std::size_t j = 0; j < waves.size(); ++j) {
    Wave& wv = waves[j];
    do {
      wv.fx = static_cast<int>(rng.next_index(7)) - 3;
      wv.fy = static_cast<int>(rng.next_index(7)) - 3;
    } while (j == 0 ? (wv.fx == 0 || wv.fy == 0) : (wv.fx == 0 && wv.fy == 0));
    wv.phase = rng.next_double() * kTwoPi;
    wv.amp = 18.0 + rng.next_double() * 22.0;
  }
  return waves;
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
}

VideoClip make_clip(const SynthTaskSpec& spec, std::int64_t label, Rng rng) {
  const MotionParams& m = spec.motions[static_cast<std::size_t>(label)];
  std::array<std::array<Wave, 4>, 3> waves;
  for (auto& chan : waves) chan = draw_waves(rng);

  VideoClip clip;
  clip.label = label;
  clip.frames = TensorT<std::uint8_t>({1, 3, spec.full_t, spec.full_h, spec.full_w}, 0);
  const double inv_w = 1.0 / static_cast<double>(spec.full_w);
  const double inv_h = 1.0 / static_cast<double>(spec.full_h);
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t t = 0; t < spec.full_t; ++t) {
      const double travel =
          m.speed * static_cast<double>(t) +
          m.osc_amp * std::sin(kTwoPi * static_cast<double>(t) / m.osc_period);
      const double dx = m.dir_w * travel;
      const double dy = m.dir_h * travel;
      for (std::int64_t y = 0; y < spec.full_h; ++y) {
        for (std::int64_t x = 0; x < spec.full_w; ++x) {
          double v = 128.0;
          for (const Wave& wv : waves[static_cast<std::size_t>(c)])
            v += wv.amp * std::cos(kTwoPi * (wv.fx * (x - dx) * inv_w +
                                             wv.fy * (y - dy) * inv_h) +
                                   wv.phase);
          clip.frames.at(0, c, t, y, x) = clamp_u8(v);
        }
      }
    }
  }
  if (spec.noise > 0) {
    for (auto& px : clip.frames.data) {
      const std::int64_t n = rng.next_index(2 * spec.noise + 1) - spec.noise;
      px = static_cast<std::uint8_t>(std::clamp<std::int64_t>(px + n, 0, 255));
    }
  }
  return clip;
}

}  // namespace

void SynthTaskSpec::validate() const {
  detail::require(num_classes >= 1, "task: num_classes must be positive");
  detail::require(clips_per_class >= 1, "task: clips_per_class must be positive");
  detail::require(full_t >= 1 && full_h >= 1 && full_w >= 1, "task: bad video extents");
  detail::require(motions.size() == static_cast<std::size_t>(num_classes),
                  "task: motions must list one entry per class");
  detail::require(noise >= 0 && noise <= 255, "task: noise must be in [0, 255]");
  for (const MotionParams& m : motions) {
    detail::require(std::abs(m.dir_h) <= 1 && std::abs(m.dir_w) <= 1,
                    "task: direction components must be -1, 0 or 1");
    detail::require(std::isfinite(m.speed) && std::isfinite(m.osc_amp), "task: bad motion");
    detail::require(m.osc_period > 0, "task: osc_period must be positive");
  }
}

SynthTaskSpec default_task(std::uint64_t seed) {
  SynthTaskSpec spec;
  spec.seed = seed;
  spec.motions = {
      {0, 1, 3.0, 0.0, 8.0},   // right
      {0, -1, 3.0, 0.0, 8.0},  // left
      {1, 0, 3.0, 0.0, 8.0},   // down
      {-1, 0, 3.0, 0.0, 8.0},  // up
  };
  return spec;
}

std::vector<VideoClip> gen_dataset(const SynthTaskSpec& spec) {
  spec.validate();
  const std::int64_t total = spec.num_classes * spec.clips_per_class;
  std::vector<VideoClip> out(static_cast<std::size_t>(total));
  const Rng root(spec.seed);
  parallel_for(total, [&](std::int64_t i) {
    out[static_cast<std::size_t>(i)] =
        make_clip(spec, i / spec.clips_per_class, root.split(static_cast<std::uint64_t>(i)));
  });
  return out;
}

std::pair<std::vector<VideoClip>, std::vector<VideoClip>> split_dataset(
    const std::vector<VideoClip>& dataset, double eval_fraction) {
  detail::require(eval_fraction >= 0.0 && eval_fraction <= 1.0,
                  "split: eval_fraction must be in [0, 1]");
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> counts;
  for (const VideoClip& clip : dataset) {
    auto it = std::find(labels.begin(), labels.end(), clip.label);
    if (it == labels.end()) {
      labels.push_back(clip.label);
      counts.push_back(1);
    } else {
      ++counts[static_cast<std::size_t>(it - labels.begin())];
    }
  }
  std::vector<std::int64_t> seen(labels.size(), 0);
  std::pair<std::vector<VideoClip>, std::vector<VideoClip>> result;
  for (const VideoClip& clip : dataset) {
    const std::size_t k = static_cast<std::size_t>(
        std::find(labels.begin(), labels.end(), clip.label) - labels.begin());
    const std::int64_t eval_n = std::llround(eval_fraction * static_cast<double>(counts[k]));
    if (seen[k]++ < counts[k] - eval_n)
      result.first.push_back(clip);
    else
      result.second.push_back(clip);
  }
  return result;
}

// --- sampling ------------------------------------------------------------------

void SampleSpec::validate() const {
  detail::require(clip_len >= 1, "sample: clip_len must be positive");
  detail::require(skip >= 1, "sample: skip must be positive");
  detail::require(s_min >= 1 && s_min <= s_max, "sample: need 1 <= s_min <= s_max");
  detail::require(crop >= 1 && crop <= s_min,
                  "sample: crop must fit the scaled short edge (crop <= s_min)");
}

TensorT<float> resize_bilinear(const TensorT<float>& in, std::int64_t out_h,
                               std::int64_t out_w) {
  detail::require(out_h >= 1 && out_w >= 1, "resize: bad target size");
  const Shape5 s = in.shape;
  TensorT<float> out({s.n, s.c, s.t, out_h, out_w}, 0.0f);

  std::vector<std::int64_t> y0(out_h), y1(out_h), x0(out_w), x1(out_w);
  std::vector<float> wy(out_h), wx(out_w);
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double src = (y + 0.5) * sy - 0.5;
    const double base = std::floor(src);
    y0[y] = std::clamp<std::int64_t>(static_cast<std::int64_t>(base), 0, s.h - 1);
    y1[y] = std::clamp<std::int64_t>(static_cast<std::int64_t>(base) + 1, 0, s.h - 1);
    wy[y] = static_cast<float>(src - base);
  }
  for (std::int64_t x = 0; x < out_w; ++x) {
    const double src = (x + 0.5) * sx - 0.5;
    const double base = std::floor(src);
    x0[x] = std::clamp<std::int64_t>(static_cast<std::int64_t>(base), 0, s.w - 1);
    x1[x] = std::clamp<std::int64_t>(static_cast<std::int64_t>(base) + 1, 0, s.w - 1);
    wx[x] = static_cast<float>(src - base);
  }

  parallel_for(s.n * s.c * s.t, [&](std::int64_t plane) {
    const std::int64_t n = plane / (s.c * s.t);
    const std::int64_t c = (plane / s.t) % s.c;
    const std::int64_t t = plane % s.t;
    const float* src = in.data.data() + in.offset(n, c, t, 0, 0);
    float* dst = out.data.data() + out.offset(n, c, t, 0, 0);
    for (std::int64_t y = 0; y < out_h; ++y) {
      const float* r0 = src + y0[y] * s.w;
      const float* r1 = src + y1[y] * s.w;
      for (std::int64_t x = 0; x < out_w; ++x) {
        const float top = r0[x0[x]] + wx[x] * (r0[x1[x]] - r0[x0[x]]);
        const float bot = r1[x0[x]] + wx[x] * (r1[x1[x]] - r1[x0[x]]);
        dst[y * out_w + x] = top + wy[y] * (bot - top);
      }
    }
  });
  return out;
}

Tensor5 normalize(const Tensor5& pixels01) {
  return map(pixels01, [](float v) { return (v - kPixelMean) / kPixelStd; });
}

Tensor5 denormalize(const Tensor5& normalized) {
  return map(normalized, [](float v) { return v * kPixelStd + kPixelMean; });
}

namespace {

struct ScaledSize {
  std::int64_t h, w;
};

ScaledSize scale_to_short_edge(std::int64_t h, std::int64_t w, std::int64_t s) {
  if (h <= w)
    return {s, std::llround(static_cast<double>(w) * static_cast<double>(s) /
                            static_cast<double>(h))};
  return {std::llround(static_cast<double>(h) * static_cast<double>(s) /
                       static_cast<double>(w)),
          s};
}

// Gathers clip_len frames from `start` at temporal stride `skip`, scales the
// short edge to s, crops a (crop x crop) window at (top, left) and normalizes.
Tensor5 assemble_clip(const VideoClip& video, const SampleSpec& sample, std::int64_t start,
                      std::int64_t s, std::int64_t top, std::int64_t left) {
  TensorT<float> stack({1, 3, sample.clip_len, video.h(), video.w()}, 0.0f);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < sample.clip_len; ++i) {
      const std::int64_t t = start + i * sample.skip;
      const std::uint8_t* src = video.frames.data.data() + video.frames.offset(0, c, t, 0, 0);
      float* dst = stack.data.data() + stack.offset(0, c, i, 0, 0);
      for (std::int64_t p = 0; p < video.h() * video.w(); ++p)
        dst[p] = static_cast<float>(src[p]);
    }
  const ScaledSize sz = scale_to_short_edge(video.h(), video.w(), s);
  const TensorT<float> scaled = resize_bilinear(stack, sz.h, sz.w);

  Tensor5 out({1, 3, sample.clip_len, sample.crop, sample.crop}, 0.0f);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t t = 0; t < sample.clip_len; ++t)
      for (std::int64_t y = 0; y < sample.crop; ++y)
        for (std::int64_t x = 0; x < sample.crop; ++x)
          out.at(0, c, t, y, x) = scaled.at(0, c, t, top + y, left + x) / 255.0f;
  return normalize(out);
}

std::int64_t start_span(const VideoClip& video, const SampleSpec& sample) {
  const std::int64_t span = video.t() - sample.clip_len * sample.skip;
  detail::require(span >= 0, "video too short: clip needs " +
                                 std::to_string(sample.clip_len * sample.skip) +
                                 " frames, video has " + std::to_string(video.t()));
  return span;
}

}  // namespace

Tensor5 sample_train_clip(const VideoClip& video, const SampleSpec& sample, Rng& rng) {
  sample.validate();
  const std::int64_t span = start_span(video, sample);
  const std::int64_t start = rng.next_index(span + 1);
  const std::int64_t s = sample.s_min + rng.next_index(sample.s_max - sample.s_min + 1);
  const ScaledSize sz = scale_to_short_edge(video.h(), video.w(), s);
  const std::int64_t top = rng.next_index(sz.h - sample.crop + 1);
  const std::int64_t left = rng.next_index(sz.w - sample.crop + 1);
  return assemble_clip(video, sample, start, s, top, left);
}

std::vector<Tensor5> sample_eval_clips(const VideoClip& video, const SampleSpec& sample,
                                       std::int64_t n_clips) {
  sample.validate();
  detail::require(n_clips >= 1, "eval: n_clips must be positive");
  const std::int64_t span = start_span(video, sample);
  const ScaledSize sz = scale_to_short_edge(video.h(), video.w(), sample.s_min);
  const std::int64_t top = (sz.h - sample.crop) / 2;
  const std::int64_t left = (sz.w - sample.crop) / 2;

  std::vector<Tensor5> clips;
  clips.reserve(static_cast<std::size_t>(n_clips));
  for (std::int64_t i = 0; i < n_clips; ++i) {
    const std::int64_t start =
        n_clips == 1 ? span / 2
                     : std::llround(static_cast<double>(i) * static_cast<double>(span) /
                                    static_cast<double>(n_clips - 1));
    clips.push_back(assemble_clip(video, sample, start, sample.s_min, top, left));
  }
  return clips;
}

// --- clip files ------------------------------------------------------------------

namespace {

constexpr std::uint32_t kClipVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string("clip file truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool done() const { return pos == buf.size(); }
};

}  // namespace

void write_clip(const std::string& path, const VideoClip& clip) {
  const Shape5 s = clip.frames.shape;
  detail::require(s.n == 1 && s.c == 3, "clip frames must be (1, 3, T, H, W)");
  detail::require(s.t <= 0xffffffffll && s.h <= 0xffffffffll && s.w <= 0xffffffffll,
                  "clip extents too large for format");
  detail::require(clip.label >= 0 && clip.label <= 0xffffffffll,
                  "clip label out of range for format");
  std::string out = "CSNV";
  put_u32(out, kClipVersion);
  put_u32(out, static_cast<std::uint32_t>(s.t));
  put_u32(out, static_cast<std::uint32_t>(s.h));
  put_u32(out, static_cast<std::uint32_t>(s.w));
  put_u32(out, static_cast<std::uint32_t>(clip.label));
  out.append(reinterpret_cast<const char*>(clip.frames.data.data()), clip.frames.data.size());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f.good()) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f.good()) throw std::runtime_error("write failed: " + path);
}

VideoClip read_clip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw std::runtime_error("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf};
  if (r.bytes(4, "magic") != "CSNV")
    throw std::runtime_error("not a clip file (bad magic): " + path);
  const std::uint32_t version = r.u32("version");
  if (version != kClipVersion)
    throw std::runtime_error("unsupported clip version " + std::to_string(version));

  VideoClip clip;
  const std::int64_t t = r.u32("T");
  const std::int64_t h = r.u32("H");
  const std::int64_t w = r.u32("W");
  clip.label = r.u32("label");
  clip.frames = TensorT<std::uint8_t>({1, 3, t, h, w}, 0);
  const std::string payload = r.bytes(clip.frames.data.size(), "pixel payload");
  std::copy(payload.begin(), payload.end(),
            reinterpret_cast<char*>(clip.frames.data.data()));
  if (!r.done()) throw std::runtime_error("trailing bytes after clip payload: " + path);
  return clip;
}

void write_dataset(const std::string& dir, const std::vector<VideoClip>& dataset,
                   const SynthTaskSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::ordered_json manifest;
  manifest["format"] = "csnv";
  manifest["version"] = kClipVersion;
  manifest["seed"] = spec.seed;
  manifest["task"] = {
      {"num_classes", spec.num_classes},
      {"clips_per_class", spec.clips_per_class},
      {"full_size", {spec.full_t, spec.full_h, spec.full_w}},
      {"noise", spec.noise},
  };
  manifest["task"]["motions"] = nlohmann::ordered_json::array();
  for (const MotionParams& m : spec.motions)
    manifest["task"]["motions"].push_back({{"dir", {m.dir_h, m.dir_w}},
                                           {"speed", m.speed},
                                           {"osc_amp", m.osc_amp},
                                           {"osc_period", m.osc_period}});
  manifest["clips"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05zu.csnv", i);
    write_clip((fs::path(dir) / name).string(), dataset[i]);
    manifest["clips"].push_back({{"path", name}, {"label", dataset[i].label}});
  }

  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!f.good()) throw std::runtime_error("cannot open for writing: " + dir + "/manifest.json");
  f << manifest.dump(2) << "\n";
  if (!f.good()) throw std::runtime_error("write failed: " + dir + "/manifest.json");
}

std::vector<VideoClip> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f.good()) throw std::runtime_error("cannot open: " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("bad manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("format", "") != "csnv")
    throw std::runtime_error("bad manifest in " + dir + ": not a csnv dataset");

  std::vector<VideoClip> out;
  for (const auto& entry : manifest.at("clips")) {
    VideoClip clip = read_clip((fs::path(dir) / entry.at("path").get<std::string>()).string());
    if (clip.label != entry.at("label").get<std::int64_t>())
      throw std::runtime_error("manifest label mismatch for " +
                               entry.at("path").get<std::string>());
    out.push_back(std::move(clip));
  }
  return out;
}

}  // namespace csn
