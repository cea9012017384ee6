#include "wsr/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wsr/rng.hpp"

namespace fs = std::filesystem;

namespace wsr {

void DegradationSpec::validate() const {
  WSR_REQUIRE(lr_size > 0 && hr_size > 0, ErrKind::usage, "degradation: sizes must be positive");
  WSR_REQUIRE(hr_size % lr_size == 0, ErrKind::usage, "degradation: hr size ", hr_size,
              " is not an integer multiple of lr size ", lr_size);
  WSR_REQUIRE(blur_sigma > 0.0, ErrKind::usage, "degradation: sigma must be positive");
}

void MotionSpec::validate() const {
  WSR_REQUIRE(max_translation >= 0.0 && max_point_jitter >= 0.0, ErrKind::usage,
              "motion: negative bound");
  WSR_REQUIRE(max_translation + max_point_jitter <= 0.3, ErrKind::usage,
              "motion: combined bound ", max_translation + max_point_jitter,
              " exceeds the 0.3 safety limit");
}

void FrameSequence::validate() const {
  WSR_REQUIRE(frame_count() >= 1 && frame_count() % 2 == 1, ErrKind::usage, "sequence '", id,
              "': frame count must be odd and >= 1, got ", frame_count());
  for (const Image& f : lr_frames)
    for (float v : f.v)
      WSR_REQUIRE(v >= 0.0f && v <= 1.0f, ErrKind::usage, "sequence '", id,
                  "': pixel value outside [0,1]");
  for (float v : hr_truth.v)
    WSR_REQUIRE(v >= 0.0f && v <= 1.0f, ErrKind::usage, "sequence '", id,
                "': ground-truth pixel outside [0,1]");
}

// ------------------------------------------------------------ degradation

std::vector<double> gaussian_kernel(double sigma) {
  WSR_REQUIRE(sigma > 0.0, ErrKind::usage, "gaussian_kernel: sigma must be positive, got ", sigma);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const int radius = (static_cast<int>(k.size()) - 1) / 2;
  const int h = img.h, w = img.w;
  Image tmp(h, w), out(h, w);
  // horizontal
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
          acc += k[static_cast<size_t>(t + radius)] * img.at(c, y, reflect_index(x + t, w));
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
  // vertical
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
          acc += k[static_cast<size_t>(t + radius)] * tmp.at(c, reflect_index(y + t, h), x);
        out.at(c, y, x) = static_cast<float>(acc);
      }
  out.clamp01();
  return out;
}

Image area_downsample(const Image& img, int factor) {
  WSR_REQUIRE(factor >= 1, ErrKind::usage, "area_downsample: factor must be >= 1");
  WSR_REQUIRE(img.h % factor == 0 && img.w % factor == 0, ErrKind::usage,
              "area_downsample: ", img.h, "x", img.w, " not divisible by ", factor);
  const int oh = img.h / factor, ow = img.w / factor;
  Image out(oh, ow);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += img.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = static_cast<float>(acc * inv);
      }
  return out;
}

Image degrade(const Image& hr, const DegradationSpec& spec) {
  spec.validate();
  WSR_REQUIRE(hr.h == spec.hr_size && hr.w == spec.hr_size, ErrKind::usage, "degrade: expected ",
              spec.hr_size, "x", spec.hr_size, " input, got ", hr.h, "x", hr.w);
  Image work = spec.apply_blur ? gaussian_blur(hr, spec.blur_sigma) : hr;
  Image out = area_downsample(work, spec.magnification());
  out.clamp01();
  return out;
}

// ---------------------------------------------------------- base textures

namespace {

struct Ellipse {
  double cx, cy, ax, ay, angle;
  float color[3];
  // soft-edged coverage in [0,1]
  double coverage(double x, double y) const {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = ((x - cx) * ca + (y - cy) * sa) / ax;
    const double v = (-(x - cx) * sa + (y - cy) * ca) / ay;
    const double r = u * u + v * v;
    if (r >= 1.21) return 0.0;
    if (r <= 0.81) return 1.0;
    const double t = (1.1 - std::sqrt(r)) / 0.2;
    return t * t * (3.0 - 2.0 * t);
  }
};

}  // namespace

Image base_texture(uint64_t seed, int size) {
  Rng rng(mix_seed(seed, 0x7e87));
  Image img(size, size);

  float bg0[3], bg1[3];
  for (int c = 0; c < 3; ++c) {
    bg0[c] = static_cast<float>(rng.uniform(0.1, 0.9));
    bg1[c] = static_cast<float>(rng.uniform(0.1, 0.9));
  }
  const double gtheta = rng.uniform(0.0, 2.0 * M_PI);
  const double gx = std::cos(gtheta), gy = std::sin(gtheta);

  Ellipse face{rng.uniform(-0.1, 0.1),  rng.uniform(-0.1, 0.05),
               rng.uniform(0.45, 0.62), rng.uniform(0.55, 0.75),
               rng.uniform(-0.2, 0.2),  {}};
  face.color[0] = static_cast<float>(rng.uniform(0.55, 0.9));
  face.color[1] = static_cast<float>(rng.uniform(0.4, 0.72));
  face.color[2] = static_cast<float>(rng.uniform(0.3, 0.6));

  const double eye_dx = rng.uniform(0.18, 0.3);
  const double eye_y = face.cy + rng.uniform(-0.3, -0.18);
  const double eye_r = rng.uniform(0.05, 0.1);
  Ellipse eyes[2];
  for (int e = 0; e < 2; ++e) {
    eyes[e] = Ellipse{face.cx + (e == 0 ? -eye_dx : eye_dx), eye_y,
                      eye_r,   eye_r * rng.uniform(0.6, 1.0),
                      0.0,     {}};
    const float shade = static_cast<float>(rng.uniform(0.02, 0.2));
    eyes[e].color[0] = eyes[e].color[1] = eyes[e].color[2] = shade;
  }
  Ellipse mouth{face.cx + rng.uniform(-0.05, 0.05), face.cy + rng.uniform(0.3, 0.45),
                rng.uniform(0.15, 0.26),            rng.uniform(0.04, 0.09),
                rng.uniform(-0.15, 0.15),           {}};
  mouth.color[0] = static_cast<float>(rng.uniform(0.5, 0.8));
  mouth.color[1] = static_cast<float>(rng.uniform(0.1, 0.3));
  mouth.color[2] = static_cast<float>(rng.uniform(0.15, 0.35));

  // oriented sinusoidal detail (cycles per unit length chosen around and
  // above the LR Nyquist rate so multiple sub-pixel views genuinely help)
  struct Wave {
    double fx, fy, phase, amp;
  };
  Wave waves[3];
  for (Wave& wv : waves) {
    const double cycles = rng.uniform(4.0, 14.0);
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    wv = {cycles * M_PI * std::cos(theta), cycles * M_PI * std::sin(theta),
          rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.05, 0.12)};
  }
  const uint64_t speckle_seed = rng.next_u64();

  for (int yy = 0; yy < size; ++yy)
    for (int xx = 0; xx < size; ++xx) {
      const double x = pixel_center_coord(xx, size);
      const double y = pixel_center_coord(yy, size);
      const double t = 0.5 + 0.5 * (x * gx + y * gy);
      float px[3];
      for (int c = 0; c < 3; ++c)
        px[c] = static_cast<float>(bg0[c] * (1.0 - t) + bg1[c] * t);

      const double fcov = face.coverage(x, y);
      if (fcov > 0.0)
        for (int c = 0; c < 3; ++c)
          px[c] = static_cast<float>(px[c] * (1.0 - fcov) + face.color[c] * fcov);
      for (const Ellipse* e : {&eyes[0], &eyes[1], &mouth}) {
        const double cov = e->coverage(x, y);
        if (cov > 0.0)
          for (int c = 0; c < 3; ++c)
            px[c] = static_cast<float>(px[c] * (1.0 - cov) + e->color[c] * cov);
      }
      double detail = 0.0;
      for (const Wave& wv : waves) detail += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
      detail *= (0.35 + 0.65 * fcov);
      // cheap decorrelated speckle
      uint64_t hsh = speckle_seed ^ (static_cast<uint64_t>(yy) * 0x9E3779B1u + xx);
      hsh = (hsh ^ (hsh >> 33)) * 0xff51afd7ed558ccdull;
      hsh ^= hsh >> 33;
      const double speck = (static_cast<double>(hsh >> 11) * 0x1.0p-53 - 0.5) * 0.05;
      for (int c = 0; c < 3; ++c) px[c] = static_cast<float>(px[c] + detail + speck);
      for (int c = 0; c < 3; ++c) img.at(c, yy, xx) = px[c];
    }
  img.clamp01();
  return img;
}

// ------------------------------------------------------------- sequences

namespace {

// Generative shifts for one frame: uniform translation plus per-point jitter.
std::vector<float> draw_frame_shifts(Rng& rng, const MotionSpec& motion, int c) {
  std::vector<float> sh(static_cast<size_t>(2 * c), 0.0f);
  const double tx = rng.uniform(-motion.max_translation, motion.max_translation);
  const double ty = rng.uniform(-motion.max_translation, motion.max_translation);
  for (int j = 0; j < c; ++j) {
    sh[static_cast<size_t>(j)] =
        static_cast<float>(tx + rng.uniform(-motion.max_point_jitter, motion.max_point_jitter));
    sh[static_cast<size_t>(c + j)] =
        static_cast<float>(ty + rng.uniform(-motion.max_point_jitter, motion.max_point_jitter));
  }
  return sh;
}

}  // namespace

FrameSequence synth_sequence(const Image& base, const MotionSpec& motion, int n,
                             const DegradationSpec& spec, const TpsSystem& sys_hr, uint64_t seed,
                             std::string id, int identity) {
  WSR_REQUIRE(n >= 1 && n % 2 == 1, ErrKind::usage, "synth_sequence: frame count must be odd, got ",
              n);
  motion.validate();
  spec.validate();
  WSR_REQUIRE(base.h == spec.hr_size && base.w == spec.hr_size, ErrKind::usage,
              "synth_sequence: base is ", base.h, "x", base.w, ", spec wants ", spec.hr_size);
  WSR_REQUIRE(sys_hr.out_h() == spec.hr_size && sys_hr.out_w() == spec.hr_size, ErrKind::usage,
              "synth_sequence: TPS system resolution mismatch");

  Rng rng(seed);
  const int c = sys_hr.control_count();
  const int central = n / 2;

  FrameSequence seq;
  seq.id = std::move(id);
  seq.identity = identity;
  seq.lr_frames.resize(static_cast<size_t>(n));
  std::vector<float> all_shifts(static_cast<size_t>(n) * 2 * c, 0.0f);

  const Tensor<float> base_t = image_to_tensor<float>(base);
  for (int i = 0; i < n; ++i) {
    Image hr_i;
    if (i == central) {
      hr_i = base;
    } else {
      std::vector<float> sh = draw_frame_shifts(rng, motion, c);
      std::copy(sh.begin(), sh.end(), all_shifts.begin() + static_cast<size_t>(i) * 2 * c);
      const Tensor<float> shifts = Tensor<float>::from_values({2 * c}, std::move(sh));
      const Tensor<float> field = tps_grid<float>(nullptr, shifts, sys_hr);
      hr_i = tensor_to_image(grid_sample<float>(nullptr, base_t, field));
      hr_i.clamp01();
    }
    seq.lr_frames[static_cast<size_t>(i)] = degrade(hr_i, spec);
  }
  seq.hr_truth = base;
  seq.oracle_shifts = Tensor<float>::from_values({n, 2 * c}, std::move(all_shifts));
  seq.validate();
  return seq;
}

Dataset synth_dataset(const SynthSpec& spec) {
  WSR_REQUIRE(spec.samples >= 1, ErrKind::usage, "synth_dataset: need at least one sample");
  WSR_REQUIRE(spec.frames >= 1 && spec.frames % 2 == 1, ErrKind::usage,
              "synth_dataset: frame count must be odd, got ", spec.frames);
  WSR_REQUIRE(spec.identities >= 1, ErrKind::usage, "synth_dataset: need at least one identity");
  spec.degradation.validate();
  spec.motion.validate();

  const ControlGrid grid = ControlGrid::regular(8);
  const TpsSystem sys_hr(grid, spec.degradation.hr_size, spec.degradation.hr_size);

  // base textures are per identity; sequences cycle through identities
  std::vector<Image> bases(static_cast<size_t>(spec.identities));
  for (int i = 0; i < spec.identities; ++i)
    bases[static_cast<size_t>(i)] =
        base_texture(mix_seed(spec.seed, 0x1000 + static_cast<uint64_t>(i)),
                     spec.degradation.hr_size);

  Dataset ds;
  ds.seqs.reserve(static_cast<size_t>(spec.samples));
  for (int s = 0; s < spec.samples; ++s) {
    const int identity = s % spec.identities;
    std::ostringstream id;
    id << "seq" << s << "-id" << identity;
    ds.seqs.push_back(synth_sequence(bases[static_cast<size_t>(identity)], spec.motion, spec.frames,
                                     spec.degradation, sys_hr,
                                     mix_seed(spec.seed, 0x2000 + static_cast<uint64_t>(s)),
                                     id.str(), identity));
  }
  return ds;
}

// ----------------------------------------------------------- disk layout

void write_dataset(const Dataset& ds, const std::string& dir) {
  WSR_REQUIRE(!ds.seqs.empty(), ErrKind::usage, "write_dataset: empty dataset");
  std::error_code ec;
  fs::create_directories(dir, ec);
  WSR_REQUIRE(!ec, ErrKind::io, "cannot create directory '", dir, "': ", ec.message());

  std::ofstream manifest(fs::path(dir) / "manifest.tsv", std::ios::trunc);
  WSR_REQUIRE(manifest.good(), ErrKind::io, "cannot write manifest in '", dir, "'");
  for (const FrameSequence& seq : ds.seqs) {
    manifest << seq.id;
    for (int i = 0; i < seq.frame_count(); ++i) {
      const std::string name = seq.id + "_lr" + std::to_string(i) + ".png";
      save_png(seq.lr_frames[static_cast<size_t>(i)], (fs::path(dir) / name).string());
      manifest << '\t' << name;
    }
    const std::string hr_name = seq.id + "_hr.png";
    save_png(seq.hr_truth, (fs::path(dir) / hr_name).string());
    const std::string warp_name = seq.id + "_warp.wsr";
    save_tensor(seq.oracle_shifts, (fs::path(dir) / warp_name).string());
    manifest << '\t' << hr_name << '\t' << warp_name << '\n';
  }
  WSR_REQUIRE(manifest.good(), ErrKind::io, "manifest write failed in '", dir, "'");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.tsv");
  WSR_REQUIRE(manifest.good(), ErrKind::io, "cannot open manifest in '", dir, "'");
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, '\t')) fields.push_back(tok);
    WSR_REQUIRE(fields.size() >= 4, ErrKind::io, "manifest line ", lineno,
                ": expected id, frames, hr, warp");
    FrameSequence seq;
    seq.id = fields[0];
    const size_t n = fields.size() - 3;
    WSR_REQUIRE(n % 2 == 1, ErrKind::io, "manifest line ", lineno, ": even frame count ", n);
    for (size_t i = 1; i <= n; ++i)
      seq.lr_frames.push_back(load_png((fs::path(dir) / fields[i]).string()));
    seq.hr_truth = load_png((fs::path(dir) / fields[n + 1]).string());
    seq.oracle_shifts = load_tensor<float>((fs::path(dir) / fields[n + 2]).string());
    const size_t idpos = seq.id.rfind("-id");
    if (idpos != std::string::npos) seq.identity = std::atoi(seq.id.c_str() + idpos + 3);
    seq.validate();
    ds.seqs.push_back(std::move(seq));
  }
  WSR_REQUIRE(!ds.seqs.empty(), ErrKind::io, "manifest in '", dir, "' lists no sequences");
  for (const FrameSequence& s : ds.seqs)
    WSR_REQUIRE(s.frame_count() == ds.frames(), ErrKind::io,
                "manifest mixes sequence lengths (", ds.frames(), " vs ", s.frame_count(), ")");
  return ds;
}

std::vector<TranslationPair> synth_translation_pairs(int count, double delta_mag,
                                                     const DegradationSpec& spec, uint64_t seed) {
  WSR_REQUIRE(count >= 1, ErrKind::usage, "synth_translation_pairs: count must be positive");
  spec.validate();
  Rng rng(mix_seed(seed, 0x7a1b));
  std::vector<TranslationPair> pairs;
  pairs.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Image base =
        base_texture(mix_seed(seed, 0x3000 + static_cast<uint64_t>(i)), spec.hr_size);
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    TranslationPair pair;
    pair.dx = delta_mag * std::cos(angle);
    pair.dy = delta_mag * std::sin(angle);
    const Tensor<float> field = translation_field<float>(spec.hr_size, spec.hr_size, pair.dx, pair.dy);
    Image moved_hr = tensor_to_image(grid_sample<float>(nullptr, image_to_tensor<float>(base), field));
    moved_hr.clamp01();
    pair.reference = degrade(base, spec);
    pair.moved = degrade(moved_hr, spec);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

}  // namespace wsr
