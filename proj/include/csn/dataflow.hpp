#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csn/tensor.hpp"

namespace csn {

// Normalization constants applied after the 1/255 pixel scaling, identical
// for all three channels.
inline constexpr float kPixelMean = 0.45f;
inline constexpr float kPixelStd = 0.225f;

// A full synthetic video: u8 RGB planes laid out (1, 3, T, H, W).
struct VideoClip {
  TensorT<std::uint8_t> frames;
  std::int64_t label = 0;
  std::int64_t fps = 30;  // in-memory tag only, not serialized

  std::int64_t t() const { return frames.shape.t; }
  std::int64_t h() const { return frames.shape.h; }
  std::int64_t w() const { return frames.shape.w; }

  bool operator==(const VideoClip& o) const {
    return label == o.label && frames.shape == o.frames.shape && frames.data == o.frames.data;
  }
};

// Per-class motion family. Each frame shows a fixed random texture translated
// by dir * (speed * t + osc_amp * sin(2*pi*t / osc_period)); the texture is a
// sum of integer-frequency cosine waves with uniform random phases, so any
// single frame is distributed identically across classes and only the
// temporal displacement carries the label.
struct MotionParams {
  int dir_h = 0;
  int dir_w = 1;
  double speed = 3.0;       // pixels per source frame
  double osc_amp = 0.0;     // optional oscillation, pixels
  double osc_period = 8.0;  // frames per cycle
};

struct SynthTaskSpec {
  std::int64_t num_classes = 4;
  std::int64_t clips_per_class = 50;
  std::int64_t full_t = 16, full_h = 64, full_w = 64;
  std::vector<MotionParams> motions;  // one per class; default_task fills them
  std::int64_t noise = 8;             // uniform integer pixel noise in [-noise, noise]
  std::uint64_t seed = 0;

  void validate() const;
};

// The 4-class direction task (right, left, down, up) at desk scale:
// 16-frame 64x64 videos, 50 clips per class.
SynthTaskSpec default_task(std::uint64_t seed = 0);

// Deterministic balanced dataset, class-major order (all of class 0, then
// class 1, ...). Clip k draws everything from Rng(spec.seed).split(k).
std::vector<VideoClip> gen_dataset(const SynthTaskSpec& spec);

// Balanced split: within each class the last round(eval_fraction * n) clips
// become the held-out set.
std::pair<std::vector<VideoClip>, std::vector<VideoClip>> split_dataset(
    const std::vector<VideoClip>& dataset, double eval_fraction);

// --- clip sampling -----------------------------------------------------------

struct SampleSpec {
  std::int64_t clip_len = 4;  // frames per sampled clip
  std::int64_t skip = 2;      // temporal stride over source frames
  std::int64_t s_min = 36;    // short-edge scale range; eval uses s_min exactly
  std::int64_t s_max = 48;
  std::int64_t crop = 32;

  void validate() const;
};

// Bilinear resize with half-pixel centers and edge-clamped taps, applied to
// the (h, w) axes of every (n, c, t) plane.
TensorT<float> resize_bilinear(const TensorT<float>& in, std::int64_t out_h,
                               std::int64_t out_w);

// (x/255 - mean) / std and its inverse; normalized <-> [0,1] pixel domain.
Tensor5 normalize(const Tensor5& pixels01);
Tensor5 denormalize(const Tensor5& normalized);

// One augmented training clip, shape (1, 3, clip_len, crop, crop). Draw order
// is fixed: start frame in [0, T_full - clip_len*skip], short-edge scale in
// [s_min, s_max], crop top, crop left.
Tensor5 sample_train_clip(const VideoClip& video, const SampleSpec& sample, Rng& rng);

// n_clips start offsets evenly spaced over the valid range (single clip:
// centered), short edge scaled to s_min, center crop. Deterministic.
std::vector<Tensor5> sample_eval_clips(const VideoClip& video, const SampleSpec& sample,
                                       std::int64_t n_clips = 10);

// --- clip files ----------------------------------------------------------------

// Format: magic "CSNV", u32 version=1, u32 T,H,W, u32 label, then 3*T*H*W
// bytes of u8 RGB planes in (c, t, h, w) order. Little-endian throughout.
void write_clip(const std::string& path, const VideoClip& clip);
VideoClip read_clip(const std::string& path);

// Directory of clip_NNNNN.csnv files plus manifest.json recording the task
// spec, seed and per-clip paths/labels.
void write_dataset(const std::string& dir, const std::vector<VideoClip>& dataset,
                   const SynthTaskSpec& spec);
std::vector<VideoClip> load_dataset(const std::string& dir);

}  // namespace csn
