#ifndef WSR_DATA_HPP
#define WSR_DATA_HPP

#include <string>
#include <vector>

#include "wsr/image.hpp"
#include "wsr/tps.hpp"

namespace wsr {

struct DegradationSpec {
  int hr_size = 128;
  int lr_size = 16;
  double blur_sigma = 2.4;
  bool apply_blur = true;

  int magnification() const { return hr_size / lr_size; }
  void validate() const;
};

// Per-frame synthetic motion: a global translation plus independent
// control-point jitter, both in normalized units. The central frame always
// gets identity motion.
struct MotionSpec {
  double max_translation = 0.08;
  double max_point_jitter = 0.02;
  void validate() const;  // combined bound must stay within 0.3
};

struct FrameSequence {
  std::string id;
  int identity = 0;
  std::vector<Image> lr_frames;
  Image hr_truth;
  // [n, 2C] generative shifts: sampling the base with tps_grid(row i)
  // reproduces frame i's HR image. Central row is zero.
  Tensor<float> oracle_shifts;

  int frame_count() const { return static_cast<int>(lr_frames.size()); }
  int central_index() const { return frame_count() / 2; }
  void validate() const;
};

struct Dataset {
  std::vector<FrameSequence> seqs;
  int frames() const { return seqs.empty() ? 0 : seqs.front().frame_count(); }
};

// Separable Gaussian, kernel radius ceil(3*sigma), normalized to sum 1,
// reflected edges.
Image gaussian_blur(const Image& img, double sigma);
std::vector<double> gaussian_kernel(double sigma);

// Exact block-mean downsampling by an integer factor.
Image area_downsample(const Image& img, int factor);

// Optional blur then block-mean downsample to lr_size; clamped to [0,1].
Image degrade(const Image& hr, const DegradationSpec& spec);

// Procedural face-like test texture: background gradient, face/eye/mouth
// ellipses, oriented sinusoidal detail, speckle. Deterministic per seed.
Image base_texture(uint64_t seed, int size);

// n HR frames = base warped by per-frame TPS motion (central = base), each
// degraded to LR; ground truth is the central HR frame. sys_hr must be built
// for the base's resolution.
FrameSequence synth_sequence(const Image& base, const MotionSpec& motion, int n,
                             const DegradationSpec& spec, const TpsSystem& sys_hr, uint64_t seed,
                             std::string id, int identity);

struct SynthSpec {
  int samples = 16;
  int frames = 5;
  int identities = 4;
  uint64_t seed = 1;
  DegradationSpec degradation;
  MotionSpec motion;
};

Dataset synth_dataset(const SynthSpec& spec);

// Layout on disk: <dir>/manifest.tsv with one tab-separated line per sample
// (id, n LR paths, HR path, warp blob path), plus the referenced PNGs and
// oracle-warp tensor blobs.
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// LR image pairs related by a known uniform translation, for warp-predictor
// evaluation: second = base shifted by delta (normalized units). The shift
// that aligns the second image back onto the first is -delta.
struct TranslationPair {
  Image reference;
  Image moved;
  double dx = 0, dy = 0;  // generative translation of `moved`
};
std::vector<TranslationPair> synth_translation_pairs(int count, double delta_mag,
                                                     const DegradationSpec& spec, uint64_t seed);

}  // namespace wsr

#endif  // WSR_DATA_HPP
