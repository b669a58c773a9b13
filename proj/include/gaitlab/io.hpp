#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gaitlab/config.hpp"
#include "gaitlab/data.hpp"
#include "gaitlab/error.hpp"
#include "gaitlab/tensor.hpp"

namespace gaitlab {

namespace fs = std::filesystem;

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory unless absolute
  std::string subject_id;
  std::string label;
};

struct DatasetManifest {
  Modality modality = Modality::joints;
  std::vector<ManifestEntry> entries;
  fs::path root;  // directory the manifest was read from

  std::map<std::string, std::size_t> histogram() const {
    std::map<std::string, std::size_t> h;
    for (const auto& e : entries) h[e.label] += 1;
    return h;
  }

  fs::path resolve(const ManifestEntry& e) const {
    fs::path p(e.path);
    return p.is_absolute() ? p : root / p;
  }
};

/// Reads `path,subject_id,label` rows. Blank lines and lines starting with
/// '#' are skipped. Modality is inferred: `.csv` files are joint sequences,
/// anything else is a silhouette sequence directory.
inline DatasetManifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open manifest '" + file.string() + "'");
  DatasetManifest m;
  m.root = file.parent_path();
  std::string line;
  std::size_t lineno = 0;
  std::set<Modality> seen;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto cols = split(line, ',');
    require(cols.size() == 3, ErrorKind::format,
            file.string() + ":" + std::to_string(lineno) + ": expected path,subject_id,label");
    ManifestEntry e{trim(cols[0]), trim(cols[1]), trim(cols[2])};
    require(!e.path.empty() && !e.subject_id.empty() && !e.label.empty(), ErrorKind::format,
            file.string() + ":" + std::to_string(lineno) + ": empty field");
    seen.insert(fs::path(e.path).extension() == ".csv" ? Modality::joints : Modality::silhouettes);
    m.entries.push_back(std::move(e));
  }
  require(!m.entries.empty(), ErrorKind::format, "manifest '" + file.string() + "' has no entries");
  require(seen.size() == 1, ErrorKind::format, "manifest mixes joint and silhouette entries");
  m.modality = *seen.begin();
  return m;
}

inline void write_manifest(const fs::path& file, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write manifest '" + file.string() + "'");
  for (const auto& e : entries) out << e.path << ',' << e.subject_id << ',' << e.label << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "manifest write failed");
}

// ---------------------------------------------------------------------------
// joint sequences: one row per frame, comma separated

inline void write_joint_csv(const fs::path& file, const Tensor<double>& frames) {
  require(frames.rank() == 2, ErrorKind::dimension, "joint frames must be [T, F]");
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + file.string() + "'");
  for (std::size_t t = 0; t < frames.extent(0); ++t) {
    for (std::size_t f = 0; f < frames.extent(1); ++f) {
      if (f) out << ',';
      out << format_real(frames(t, f));
    }
    out << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::io, "joint csv write failed");
}

inline Tensor<double> read_joint_csv(const fs::path& file) {
  std::ifstream in(file);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open joint sequence '" + file.string() + "'");
  std::vector<double> values;
  std::size_t rows = 0, width = 0;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto cols = split(line, ',');
    if (rows == 0) width = cols.size();
    require(cols.size() == width, ErrorKind::format,
            file.string() + ": row " + std::to_string(rows + 1) + " has " +
                std::to_string(cols.size()) + " columns, expected " + std::to_string(width));
    for (const auto& c : cols) {
      try {
        std::size_t used = 0;
        const std::string s = trim(c);
        values.push_back(std::stod(s, &used));
        require(used == s.size(), ErrorKind::format, "trailing characters");
      } catch (const std::logic_error&) {
        throw Error(ErrorKind::format, file.string() + ": bad number '" + c + "'");
      }
    }
    ++rows;
  }
  require(rows > 0, ErrorKind::format, "joint sequence '" + file.string() + "' is empty");
  return Tensor<double>({rows, width}, std::move(values));
}

// ---------------------------------------------------------------------------
// PGM (binary P5) frames

inline void write_pgm(const fs::path& file, const Tensor<double>& img) {
  require(img.rank() == 2, ErrorKind::dimension, "PGM image must be [H, W]");
  std::ofstream out(file, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + file.string() + "'");
  out << "P5\n" << img.extent(1) << ' ' << img.extent(0) << "\n255\n";
  for (double v : img.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  require(static_cast<bool>(out), ErrorKind::io, "PGM write failed");
}

/// Reads a P5 graymap scaled to [0, 1].
inline Tensor<double> read_pgm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + file.string() + "'");
  auto token = [&]() {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  require(token() == "P5", ErrorKind::format, file.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::format, file.string() + ": malformed PGM header");
  }
  require(w > 0 && h > 0 && maxval > 0 && maxval < 65536, ErrorKind::format,
          file.string() + ": invalid PGM header");
  Tensor<double> img({h, w});
  for (double& v : img.data()) {
    int a = in.get();
    std::size_t raw = static_cast<std::size_t>(a);
    if (maxval > 255) raw = (raw << 8) | static_cast<std::size_t>(in.get());
    require(a != EOF && static_cast<bool>(in), ErrorKind::format, file.string() + ": truncated PGM");
    v = double(raw) / double(maxval);
  }
  return img;
}

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.pgm", i);
  return buf;
}

/// Writes a [T, H, W] volume as one PGM per frame plus `sequence.txt`
/// listing frame files in order.
inline void write_silhouette_dir(const fs::path& dir, const Tensor<double>& vol) {
  require(vol.rank() == 3, ErrorKind::dimension, "silhouette volume must be [T, H, W]");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::io, "cannot create '" + dir.string() + "'");
  std::ofstream desc(dir / "sequence.txt", std::ios::binary);
  require(static_cast<bool>(desc), ErrorKind::io, "cannot write sequence descriptor");
  for (std::size_t t = 0; t < vol.extent(0); ++t) {
    write_pgm(dir / frame_name(t), vol.slice(t));
    desc << frame_name(t) << '\n';
  }
}

/// Reads a sequence directory into a binary [T, H, W] volume (threshold at
/// half intensity).
inline Tensor<double> read_silhouette_dir(const fs::path& dir) {
  std::ifstream desc(dir / "sequence.txt");
  require(static_cast<bool>(desc), ErrorKind::io,
          "missing sequence descriptor in '" + dir.string() + "'");
  std::vector<Tensor<double>> frames;
  std::string line;
  while (std::getline(desc, line)) {
    line = trim(line);
    if (line.empty()) continue;
    Tensor<double> f = read_pgm(dir / line);
    for (double& v : f.data()) v = v >= 0.5 ? 1.0 : 0.0;
    if (!frames.empty())
      require(f.shape() == frames[0].shape(), ErrorKind::format,
              "frame size changes within '" + dir.string() + "'");
    frames.push_back(std::move(f));
  }
  require(!frames.empty(), ErrorKind::format, "sequence '" + dir.string() + "' has no frames");
  return stack<double>(frames);
}

// ---------------------------------------------------------------------------
// loading

struct LoadOptions {
  std::size_t frames = kFrames;      // pad/crop target
  std::size_t rows = kSilhouetteRows;
  std::size_t cols = kSilhouetteCols;
  std::vector<std::string> classes;  // empty: derive from labels
};

/// Silhouette frames are binarised, resized (via the 128x88 intermediate
/// unless already at an expected size) and padded/cropped; joint sequences are
/// validated and padded/cropped.
inline Dataset load_dataset(const DatasetManifest& m, const LoadOptions& opt) {
  Dataset d;
  if (opt.classes.empty()) {
    std::set<std::string> labels;
    for (const auto& e : m.entries) labels.insert(e.label);
    d.classes = ordered_classes(labels);
  } else {
    d.classes = opt.classes;
  }
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < d.classes.size(); ++i) index[d.classes[i]] = int(i);
  for (const auto& e : m.entries) {
    auto it = index.find(e.label);
    require(it != index.end(), ErrorKind::format, "label '" + e.label + "' is not a known class");
    Tensor<double> x;
    if (m.modality == Modality::joints) {
      JointSequence js{read_joint_csv(m.resolve(e)), e.subject_id, e.label};
      js.validate();
      x = pad_or_crop(js.frames, opt.frames);
    } else {
      Tensor<double> vol = read_silhouette_dir(m.resolve(e));
      const std::size_t h = vol.extent(1), w = vol.extent(2);
      if (!(h == opt.rows && w == opt.cols)) {
        if (!(h == 128 && w == 88)) vol = resize_volume(vol, 128, 88);
        vol = resize_volume(vol, opt.rows, opt.cols);
      }
      x = pad_or_crop(vol, opt.frames);
    }
    d.samples.push_back({std::move(x), it->second, e.subject_id});
  }
  return d;
}

inline Dataset load_dataset(const fs::path& manifest, const LoadOptions& opt) {
  return load_dataset(read_manifest(manifest), opt);
}

}  // namespace gaitlab
