#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/data.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/io.hpp"
#include "gaitlab/rng.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

/**
 * Seeded synthetic datasets.
 *
 * Tasks:
 *  - joints/gait: sinusoidal 18-joint walking skeleton in normalised image
 *    coordinates, with class-specific deformations for the abnormal classes.
 *    A class named "abnormal" draws one of the four deformations per sequence.
 *  - joints/order: two short events A and B a fixed gap apart on a zero
 *    background; class 0 shows A first, class 1 shows B first. The gap is a
 *    multiple of 8 frames and both events stay `order_margin` frames clear of
 *    the sequence ends, so the bag of frames carries no class information.
 *  - silhouettes/gait: ellipse-pair walking figure at 128x88 whose stride
 *    geometry depends on the class.
 *  - silhouettes/quadrant: an oscillating bar confined to one quadrant,
 *    horizontal for class 0 and vertical for class 1, over sparse speckle.
 */
struct SynthConfig {
  Modality modality = Modality::joints;
  std::string task = "gait";
  std::vector<std::string> classes{"normal", "antalgic", "lurch", "spastic", "steppage"};
  std::vector<double> proportions;  // empty: equal
  std::size_t subjects = 20;
  std::size_t sequences = 20;  // per subject
  std::size_t frames = 50;
  std::size_t rows = 128;
  std::size_t cols = 88;
  double severity = 1.0;
  double noise = 0.005;
  std::size_t quadrant = 0;  // 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right
  std::size_t order_gap = 32;
  std::size_t order_margin = 24;
  std::uint64_t seed = 0;

  void write(FlatConfig& kv) const {
    std::string cls, prop;
    for (std::size_t i = 0; i < classes.size(); ++i) cls += (i ? "," : "") + classes[i];
    for (std::size_t i = 0; i < proportions.size(); ++i)
      prop += (i ? "," : "") + format_real(proportions[i]);
    kv.set("synth.modality", to_string(modality));
    kv.set("synth.task", task);
    kv.set("synth.classes", cls);
    kv.set("synth.proportions", prop);
    kv.set("synth.subjects", std::uint64_t{subjects});
    kv.set("synth.sequences", std::uint64_t{sequences});
    kv.set("synth.frames", std::uint64_t{frames});
    kv.set("synth.rows", std::uint64_t{rows});
    kv.set("synth.cols", std::uint64_t{cols});
    kv.set("synth.severity", severity);
    kv.set("synth.noise", noise);
    kv.set("synth.quadrant", std::uint64_t{quadrant});
    kv.set("synth.order_gap", std::uint64_t{order_gap});
    kv.set("synth.order_margin", std::uint64_t{order_margin});
    kv.set("synth.seed", seed);
  }

  static SynthConfig read(FlatConfig& kv) {
    SynthConfig c;
    c.modality = modality_from_string(kv.get_string("synth.modality", to_string(c.modality)));
    c.task = kv.get_string("synth.task", c.task);
    if (c.modality == Modality::silhouettes && c.task == "quadrant") {
      c.classes = {"horizontal", "vertical"};
      c.rows = 44;
      c.cols = 64;
    } else if (c.task == "order") {
      c.classes = {"a_then_b", "b_then_a"};
      c.frames = 96;
    }
    std::string cls;
    for (std::size_t i = 0; i < c.classes.size(); ++i) cls += (i ? "," : "") + c.classes[i];
    c.classes.clear();
    for (const auto& s : split(kv.get_string("synth.classes", cls), ','))
      if (!trim(s).empty()) c.classes.push_back(trim(s));
    const std::string prop = kv.get_string("synth.proportions", "");
    if (!trim(prop).empty()) c.proportions = kv.get_reals("synth.proportions", {});
    c.subjects = kv.get_uint("synth.subjects", c.subjects);
    c.sequences = kv.get_uint("synth.sequences", c.sequences);
    c.frames = kv.get_uint("synth.frames", c.frames);
    c.rows = kv.get_uint("synth.rows", c.rows);
    c.cols = kv.get_uint("synth.cols", c.cols);
    c.severity = kv.get_real("synth.severity", c.severity);
    c.noise = kv.get_real("synth.noise", c.noise);
    c.quadrant = kv.get_uint("synth.quadrant", c.quadrant);
    c.order_gap = kv.get_uint("synth.order_gap", c.order_gap);
    c.order_margin = kv.get_uint("synth.order_margin", c.order_margin);
    c.seed = kv.get_uint("synth.seed", c.seed);
    return c;
  }

  void validate() const {
    require(subjects >= 2, ErrorKind::config, "synth needs at least 2 subjects");
    require(sequences >= 1, ErrorKind::config, "synth needs at least 1 sequence per subject");
    require(classes.size() >= 2, ErrorKind::config, "synth needs at least 2 classes");
    require(frames >= 1, ErrorKind::config, "synth frame count must be positive");
    require(proportions.empty() || proportions.size() == classes.size(), ErrorKind::config,
            "synth.proportions must list one value per class");
    double total = 0;
    for (double p : proportions) {
      require(p >= 0.0 && std::isfinite(p), ErrorKind::config, "proportions must be >= 0");
      total += p;
    }
    require(proportions.empty() || total > 0.0, ErrorKind::config, "proportions sum to zero");
    require(severity >= 0.0 && noise >= 0.0, ErrorKind::config, "severity and noise must be >= 0");
    if (modality == Modality::joints) {
      require(task == "gait" || task == "order", ErrorKind::config,
              "joints task must be gait or order, got '" + task + "'");
      if (task == "gait")
        for (const auto& c : classes)
          require(c == "normal" || c == "abnormal" ||
                      std::find(gait_class_names().begin(), gait_class_names().end(), c) !=
                          gait_class_names().end(),
                  ErrorKind::config, "gait task has no generator for class '" + c + "'");
      if (task == "order") {
        require(classes.size() == 2, ErrorKind::config, "order task has exactly 2 classes");
        require(order_gap % 8 == 0 && order_gap > 0, ErrorKind::config,
                "order_gap must be a positive multiple of 8");
        require(frames >= 2 * order_margin + order_gap + kOrderEventLength + 1, ErrorKind::config,
                "order task needs frames >= 2*margin + gap + " +
                    std::to_string(kOrderEventLength + 1));
      }
    } else {
      require(task == "gait" || task == "quadrant", ErrorKind::config,
              "silhouettes task must be gait or quadrant, got '" + task + "'");
      require(rows >= 8 && cols >= 8, ErrorKind::config, "silhouette frames must be at least 8x8");
      if (task == "quadrant") {
        require(classes.size() == 2, ErrorKind::config, "quadrant task has exactly 2 classes");
        require(quadrant < 4, ErrorKind::config, "quadrant must be 0..3");
      }
    }
  }

  static constexpr std::size_t kOrderEventLength = 6;
};

struct SynthItem {
  std::string subject_id;
  std::string label;
  Tensor<double> data;  // joints [T, 36]; silhouettes [T, rows, cols]
};

struct SynthDataset {
  Modality modality = Modality::joints;
  std::vector<std::string> classes;
  std::vector<SynthItem> items;

  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> h(classes.size(), 0);
    for (const auto& it : items)
      h[std::size_t(std::find(classes.begin(), classes.end(), it.label) - classes.begin())] += 1;
    return h;
  }
};

/// Exact per-class counts by the largest-remainder rule.
inline std::vector<std::size_t> class_counts(std::size_t total, const std::vector<double>& props,
                                             std::size_t k) {
  std::vector<double> p = props.empty() ? std::vector<double>(k, 1.0) : props;
  double sum = 0;
  for (double v : p) sum += v;
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = double(total) * p[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rema.emplace_back(-(exact - double(counts[i])), i);
  }
  std::sort(rema.begin(), rema.end());
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) counts[rema[j % k].second] += 1;
  return counts;
}

namespace synth_detail {

constexpr double kPi = std::numbers::pi;

struct Subject {
  double period, amplitude, height, x0, phase;
};

inline Subject draw_subject(Rng& rng) {
  return {rng.uniform(24.0, 34.0), rng.uniform(0.85, 1.15), rng.uniform(0.97, 1.03),
          rng.uniform(-0.01, 0.01), rng.uniform(0.0, 2 * kPi)};
}

// joint indices (18-point body layout)
enum J {
  nose, neck, r_shoulder, r_elbow, r_wrist, l_shoulder, l_elbow, l_wrist, r_hip, r_knee, r_ankle,
  l_hip, l_knee, l_ankle, r_eye, l_eye, r_ear, l_ear
};

/// One walking sequence, [T, 36] in normalised image coordinates (y down).
inline Tensor<double> walk(const Subject& s, const std::string& style, double sev, double noise,
                           std::size_t frames, Rng& rng) {
  Tensor<double> out({frames, kJointFeatures});
  const double phase0 = s.phase + rng.uniform(0.0, 2 * kPi);
  const double thigh = 0.17 * s.height, shank = 0.17 * s.height;
  const double upper_arm = 0.12 * s.height, forearm = 0.11 * s.height;
  double leg_amp_r = 0.42 * s.amplitude, leg_amp_l = 0.42 * s.amplitude;
  double knee_gain = 0.9, lift_gain = 1.0, crouch = 0.0;
  if (style == "antalgic") leg_amp_r *= 1.0 - 0.55 * std::min(sev, 1.5);
  if (style == "spastic") {
    knee_gain *= std::max(0.0, 1.0 - 0.7 * sev);
    crouch = 0.35 * sev;
  }
  if (style == "steppage") lift_gain += 1.6 * sev;
  // spastic jitter: bursts of a fast oscillation at random onsets
  std::vector<double> burst(frames, 0.0);
  if (style == "spastic") {
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t start = rng.below(frames);
      for (std::size_t t = start; t < std::min(frames, start + 8); ++t) burst[t] = 1.0;
    }
  }
  for (std::size_t t = 0; t < frames; ++t) {
    const double ph = phase0 + 2 * kPi * double(t) / s.period;
    double xy[kJoints][2];
    const double bob = 0.01 * std::cos(2 * ph);
    double trunk_dx = 0, trunk_dy = 0;
    if (style == "lurch") {
      trunk_dx = -0.02 * sev - 0.035 * sev * std::sin(ph);
      trunk_dy = 0.06 * sev * std::max(0.0, std::sin(ph));
    }
    if (style == "antalgic") {
      trunk_dx = 0.03 * sev;
      trunk_dy = 0.03 * sev * std::max(0.0, std::sin(ph));
    }
    const double cx = 0.5 + s.x0;
    const double hip_y = 0.52 * s.height + bob;
    auto set = [&](J j, double x, double y) {
      xy[j][0] = x;
      xy[j][1] = y;
    };
    // upper body
    const double ux = cx + trunk_dx, uy = trunk_dy + bob;
    set(neck, ux, 0.20 * s.height + uy);
    set(nose, ux + 0.025, 0.11 * s.height + uy);
    set(r_eye, ux + 0.03, 0.095 * s.height + uy);
    set(l_eye, ux + 0.02, 0.095 * s.height + uy);
    set(r_ear, ux - 0.005, 0.10 * s.height + uy);
    set(l_ear, ux - 0.015, 0.10 * s.height + uy);
    set(r_shoulder, ux - 0.02, 0.22 * s.height + uy);
    set(l_shoulder, ux + 0.02, 0.22 * s.height + uy);
    for (int side = 0; side < 2; ++side) {
      const double swing = 0.35 * s.amplitude * std::sin(ph + (side ? 0.0 : kPi));
      const J sh = side ? l_shoulder : r_shoulder;
      const double ex = xy[sh][0] + upper_arm * std::sin(swing);
      const double ey = xy[sh][1] + upper_arm * std::cos(swing);
      set(side ? l_elbow : r_elbow, ex, ey);
      set(side ? l_wrist : r_wrist, ex + forearm * std::sin(swing + 0.25),
          ey + forearm * std::cos(swing + 0.25));
    }
    // legs: right leg leads with phase ph, left with ph + pi
    for (int side = 0; side < 2; ++side) {
      const double p = ph + (side ? kPi : 0.0);
      const double amp = side ? leg_amp_l : leg_amp_r;
      const double theta = amp * std::sin(p);
      const double swing = std::max(0.0, std::cos(p));  // forward-moving phase
      double knee_flex = knee_gain * 0.6 * swing * lift_gain + crouch;
      if (style == "steppage") knee_flex = std::min(knee_flex, 1.9);
      const double hx = cx + (side ? 0.01 : -0.01);
      set(side ? l_hip : r_hip, hx, hip_y);
      const double kx = hx + thigh * std::sin(theta);
      const double ky = hip_y + thigh * std::cos(theta);
      set(side ? l_knee : r_knee, kx, ky);
      double ax = kx + shank * std::sin(theta - knee_flex);
      double ay = ky + shank * std::cos(theta - knee_flex);
      if (style == "steppage") ay -= 0.05 * sev * swing;
      set(side ? l_ankle : r_ankle, ax, ay);
    }
    for (std::size_t j = 0; j < kJoints; ++j) {
      double jx = xy[j][0], jy = xy[j][1];
      if (burst[t] > 0 && (j == r_knee || j == r_ankle || j == l_knee || j == l_ankle)) {
        jx += 0.02 * sev * std::sin(kPi * double(t) / 1.5);
        jy += 0.015 * sev * std::cos(kPi * double(t) / 1.5);
      }
      out(t, 2 * j) = jx + noise * rng.normal();
      out(t, 2 * j + 1) = jy + noise * rng.normal();
    }
  }
  return out;
}

inline Tensor<double> order_events(const SynthConfig& c, bool a_first, double gain, Rng& rng) {
  const std::size_t len = SynthConfig::kOrderEventLength;
  Tensor<double> out({c.frames, kJointFeatures});
  for (double& v : out.data()) v = c.noise * rng.normal();
  const std::size_t last = c.frames - c.order_margin - c.order_gap - len;
  const std::size_t p1 = c.order_margin + rng.below(last - c.order_margin + 1);
  const std::size_t p2 = p1 + c.order_gap;
  auto event = [&](std::size_t at, std::size_t first_feature) {
    const double amp = gain * rng.uniform(0.8, 1.2) * std::max(c.severity, 1e-3);
    for (std::size_t i = 0; i < len; ++i) {
      const double shape = std::sin(kPi * (double(i) + 0.5) / double(len));
      for (std::size_t f = first_feature; f < first_feature + 12; ++f) out(at + i, f) += amp * shape;
    }
  };
  event(a_first ? p1 : p2, 0);
  event(a_first ? p2 : p1, 12);
  return out;
}

inline void fill_ellipse(Tensor<double>& img, double cy, double cx, double ry, double rx, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const long h = long(img.extent(0)), w = long(img.extent(1));
  const double r = std::max(rx, ry);
  for (long y = std::max(0L, long(cy - r) - 1); y <= std::min(h - 1, long(cy + r) + 1); ++y)
    for (long x = std::max(0L, long(cx - r) - 1); x <= std::min(w - 1, long(cx + r) + 1); ++x) {
      const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
      const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
      if ((u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0) img(std::size_t(y), std::size_t(x)) = 1.0;
    }
}

inline Tensor<double> figure(const SynthConfig& c, const Subject& s, std::size_t cls, Rng& rng) {
  Tensor<double> vol({c.frames, c.rows, c.cols});
  const double sy = double(c.rows) / 128.0, sx = double(c.cols) / 88.0;
  const double stride = (0.25 + 0.12 * double(cls) * c.severity) * s.amplitude;
  const double lift = 0.05 * double(cls % 2) * c.severity;
  const double phase0 = s.phase + rng.uniform(0.0, 2 * kPi);
  for (std::size_t t = 0; t < c.frames; ++t) {
    Tensor<double> img({c.rows, c.cols});
    const double ph = phase0 + 2 * kPi * double(t) / s.period;
    const double cx = (44.0 + 4.0 * s.x0 * 100.0) * sx;
    const double bob = 1.5 * std::cos(2 * ph) * sy;
    fill_ellipse(img, 16 * sy * s.height + bob, cx, 7 * sy, 6 * sx, 0);        // head
    fill_ellipse(img, 46 * sy * s.height + bob, cx, 22 * sy, 9 * sx, 0);       // torso
    for (int side = 0; side < 2; ++side) {
      const double a = stride * std::sin(ph + (side ? kPi : 0.0));
      const double up = lift * std::max(0.0, std::cos(ph + (side ? kPi : 0.0))) * 128.0 * sy;
      const double ly = (88 * s.height) * sy + bob - up;
      fill_ellipse(img, ly, cx + 24 * sy * std::sin(a), 24 * sy, 4.5 * sx, -a);  // leg
      fill_ellipse(img, 48 * sy * s.height + bob, cx + 12 * sy * std::sin(-a * 0.8), 16 * sy,
                   3 * sx, a * 0.8);  // arm
    }
    for (double& v : img.data())
      if (c.noise > 0 && rng.uniform() < c.noise) v = 1.0 - v;
    vol.set_slice(t, img);
  }
  return vol;
}

inline Tensor<double> quadrant_bar(const SynthConfig& c, std::size_t cls, Rng& rng) {
  Tensor<double> vol({c.frames, c.rows, c.cols});
  const std::size_t qh = c.rows / 2, qw = c.cols / 2;
  const std::size_t oy = (c.quadrant / 2) * qh, ox = (c.quadrant % 2) * qw;
  const std::size_t len = std::max<std::size_t>(3, std::min(qh, qw) / 2);
  const std::size_t thick = std::max<std::size_t>(1, len / 4);
  const std::size_t bh = cls == 0 ? thick : len, bw = cls == 0 ? len : thick;
  const double speed = rng.uniform(0.5, 1.0), phase = rng.uniform(0.0, 2 * kPi);
  const double amp_y = double(qh - bh) / 2.0, amp_x = double(qw - bw) / 2.0;
  const bool moves_x = rng.below(2) == 0;
  for (std::size_t t = 0; t < c.frames; ++t) {
    const double m = std::sin(phase + speed * double(t));
    const double y = moves_x ? amp_y : amp_y * (1.0 + m);
    const double x = moves_x ? amp_x * (1.0 + m) : amp_x;
    const std::size_t y0 = oy + std::size_t(std::lround(std::clamp(y, 0.0, double(qh - bh))));
    const std::size_t x0 = ox + std::size_t(std::lround(std::clamp(x, 0.0, double(qw - bw))));
    for (std::size_t i = 0; i < bh; ++i)
      for (std::size_t j = 0; j < bw; ++j) vol(t, y0 + i, x0 + j) = 1.0;
    for (std::size_t i = 0; i < c.rows; ++i)
      for (std::size_t j = 0; j < c.cols; ++j)
        if (c.noise > 0 && rng.uniform() < c.noise) vol(t, i, j) = 1.0 - vol(t, i, j);
  }
  return vol;
}

}  // namespace synth_detail

/// Generates the configured dataset. Labels are assigned to sequences by a
/// seeded shuffle of the exact class counts, so subjects may mix classes.
inline SynthDataset synth_generate(const SynthConfig& c) {
  c.validate();
  using namespace synth_detail;
  SynthDataset d{c.modality, c.classes, {}};
  const std::size_t total = c.subjects * c.sequences;
  const auto counts = class_counts(total, c.proportions, c.classes.size());
  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), counts[k], k);
  Rng label_rng(derive_seed(c.seed, "labels"));
  label_rng.shuffle(labels.begin(), labels.end());
  const std::vector<std::string> abnormal{"antalgic", "lurch", "spastic", "steppage"};

  for (std::size_t s = 0; s < c.subjects; ++s) {
    Rng subject_rng(derive_seed(derive_seed(c.seed, "subject"), s));
    const Subject subj = draw_subject(subject_rng);
    char sid[16];
    std::snprintf(sid, sizeof sid, "s%03zu", s);
    for (std::size_t q = 0; q < c.sequences; ++q) {
      const std::size_t idx = s * c.sequences + q;
      const std::size_t cls = labels[idx];
      Rng rng(derive_seed(derive_seed(c.seed, "sequence"), idx));
      Tensor<double> data;
      if (c.modality == Modality::joints) {
        if (c.task == "order") {
          data = order_events(c, cls == 0, subj.amplitude, rng);
        } else {
          std::string style = c.classes[cls];
          if (style == "abnormal") style = abnormal[rng.below(abnormal.size())];
          data = walk(subj, style, c.severity, c.noise, c.frames, rng);
        }
      } else {
        data = c.task == "quadrant" ? quadrant_bar(c, cls, rng) : figure(c, subj, cls, rng);
      }
      d.items.push_back({sid, c.classes[cls], std::move(data)});
    }
  }
  return d;
}

/// In-memory equivalent of writing the dataset and loading it back.
inline Dataset synth_to_dataset(const SynthDataset& s, const LoadOptions& opt) {
  Dataset d{s.classes, {}};
  for (const auto& it : s.items) {
    const int label = int(std::find(s.classes.begin(), s.classes.end(), it.label) - s.classes.begin());
    Tensor<double> x = it.data;
    if (s.modality == Modality::silhouettes) {
      const std::size_t h = x.extent(1), w = x.extent(2);
      if (!(h == opt.rows && w == opt.cols)) {
        if (!(h == 128 && w == 88)) x = resize_volume(x, 128, 88);
        x = resize_volume(x, opt.rows, opt.cols);
      }
    }
    d.samples.push_back({pad_or_crop(x, opt.frames), label, it.subject_id});
  }
  return d;
}

/// Writes `manifest.csv` plus one file (joints) or directory (silhouettes)
/// per sequence under `dir`.
inline std::vector<ManifestEntry> write_synth(const SynthDataset& s, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "data", ec);
  require(!ec && fs::is_directory(dir / "data"), ErrorKind::io,
          "cannot create output directory '" + dir.string() + "'");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < s.items.size(); ++i) {
    const auto& it = s.items[i];
    char name[32];
    std::snprintf(name, sizeof name, "seq_%05zu", i);
    std::string rel = std::string("data/") + name;
    if (s.modality == Modality::joints) {
      rel += ".csv";
      write_joint_csv(dir / rel, it.data);
    } else {
      write_silhouette_dir(dir / rel, it.data);
    }
    entries.push_back({rel, it.subject_id, it.label});
  }
  write_manifest(dir / "manifest.csv", entries);
  return entries;
}

}  // namespace gaitlab
