#include "teb/tasks.hpp"

#include "teb/archive.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

namespace teb {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(what + ": truncated header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

float bilinear(const float* img, Index h, Index w, double y, double x) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const Index y0 = static_cast<Index>(fy);
  const Index x0 = static_cast<Index>(fx);
  const double ty = y - fy;
  const double tx = x - fx;
  auto at = [&](Index i, Index j) -> double {
    return (i >= 0 && i < h && j >= 0 && j < w) ? img[i * w + j] : 0.0;
  };
  const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                   ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
  return static_cast<float>(v);
}

struct Segment {
  double x0, y0, x1, y1;
};

// Seven-segment strokes in a box x in [-.45, .45], y in [-.8, .8].
std::vector<Segment> glyph_strokes(int cls) {
  const double l = -0.45, r = 0.45, t = 0.8, m = 0.0, b = -0.8;
  const Segment a{l, t, r, t}, sb{r, t, r, m}, c{r, m, r, b}, d{l, b, r, b}, e{l, m, l, b},
      f{l, t, l, m}, g{l, m, r, m};
  switch (cls) {
    case 0: return {a, sb, c, d, e, f};
    case 1: return {{0.0, t, 0.0, b}, {0.0, t, -0.3, 0.5}};
    case 2: return {a, sb, g, e, d};
    case 3: return {a, sb, g, c, d};
    case 4: return {f, g, sb, c};
    case 5: return {a, f, g, c, d};
    case 6: return {a, f, g, e, d, c};
    case 7: return {a, sb, c};
    case 8: return {a, sb, c, d, e, f, g};
    default: return {a, sb, c, d, f, g};
  }
}

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * dx);
  const double ey = py - (s.y0 + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

Dataset empty_like(TaskKind kind, int n) {
  Dataset d;
  d.kind = kind;
  const auto un = static_cast<std::size_t>(n);
  d.switched.assign(un, 0);
  d.changed.assign(un, 0);
  d.y_class.assign(un, -1);
  d.prev_class.assign(un, -1);
  d.angle.assign(un, -1);
  return d;
}

Glyphs select_examples(const Glyphs& all, int num_classes, int per_class, int offset) {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < all.count(); ++i) {
    const int c = all.labels[static_cast<std::size_t>(i)];
    if (c >= 0 && c < num_classes) {
      by_class[static_cast<std::size_t>(c)].push_back(i);
    }
  }
  std::vector<Index> take;
  Glyphs out;
  out.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c) {
    const auto& ids = by_class[static_cast<std::size_t>(c)];
    const auto need = static_cast<std::size_t>(offset + per_class);
    if (ids.size() < need) {
      throw ContractError("digit source has only " + std::to_string(ids.size()) +
                          " examples of class " + std::to_string(c) + ", need " +
                          std::to_string(need));
    }
    for (int k = 0; k < per_class; ++k) {
      take.push_back(ids[static_cast<std::size_t>(offset + k)]);
      out.labels.push_back(c);
    }
  }
  out.images = all.images.take_rows(take);
  return out;
}

}  // namespace

Tensor<float> Glyphs::class_means() const {
  const Index s = side();
  Tensor<float> out(Shape{num_classes, s, s});
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (Index i = 0; i < count(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    out.mat().row(c) += images.mat().row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < num_classes; ++c) {
    require(counts[static_cast<std::size_t>(c)] > 0,
            "digit source missing class " + std::to_string(c));
    out.mat().row(c) /= static_cast<float>(counts[static_cast<std::size_t>(c)]);
  }
  return out;
}

Glyphs load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream im(images_path, std::ios::binary);
  if (!im) {
    throw FormatError("cannot open '" + images_path + "'");
  }
  const std::uint32_t magic = read_be32(im, images_path);
  if (magic != 0x00000803u) {
    throw FormatError(images_path + ": bad IDX image magic");
  }
  const std::uint32_t n = read_be32(im, images_path);
  const std::uint32_t rows = read_be32(im, images_path);
  const std::uint32_t cols = read_be32(im, images_path);
  require(rows == cols && rows > 0, "IDX images must be square");
  std::vector<unsigned char> pix(static_cast<std::size_t>(n) * rows * cols);
  if (!im.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()))) {
    throw FormatError(images_path + ": truncated payload");
  }
  std::ifstream lb(labels_path, std::ios::binary);
  if (!lb) {
    throw FormatError("cannot open '" + labels_path + "'");
  }
  if (read_be32(lb, labels_path) != 0x00000801u) {
    throw FormatError(labels_path + ": bad IDX label magic");
  }
  const std::uint32_t nl = read_be32(lb, labels_path);
  if (nl != n) {
    throw FormatError("IDX image/label counts differ");
  }
  std::vector<unsigned char> lab(n);
  if (!lb.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(n))) {
    throw FormatError(labels_path + ": truncated payload");
  }
  Glyphs g;
  g.images = Tensor<float>(Shape{static_cast<Index>(n), rows, cols});
  for (std::size_t i = 0; i < pix.size(); ++i) {
    g.images[static_cast<Index>(i)] = static_cast<float>(pix[i]) / 255.0f;
  }
  g.labels.assign(lab.begin(), lab.end());
  for (int l : g.labels) {
    if (l > 9) {
      throw FormatError(labels_path + ": label outside 0..9");
    }
  }
  g.num_classes = 10;
  return g;
}

Glyphs load_digits(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path dir(path);
  return load_idx((dir / "train-images-idx3-ubyte").string(),
                  (dir / "train-labels-idx1-ubyte").string());
}

Glyphs procedural_glyphs(int per_class, int side, std::uint64_t seed) {
  require(per_class >= 1 && side >= 5, "procedural_glyphs: bad size");
  const CounterRng base(seed, 0x61797068);
  Glyphs g;
  g.num_classes = 10;
  g.images = Tensor<float>(Shape{10 * per_class, side, side});
  const double c = (side - 1) / 2.0;
  const double radius = (side - 1) / 2.0 * 0.9;
  const double aa = 1.0 / radius;
  for (int cls = 0; cls < 10; ++cls) {
    const auto strokes = glyph_strokes(cls);
    for (int k = 0; k < per_class; ++k) {
      const Index idx = cls * per_class + k;
      CounterRng rng = base.substream(static_cast<std::uint64_t>(idx));
      const double scale = rng.uniform(0.85, 1.05);
      const double rot = rng.uniform(-0.15, 0.15);
      const double shear = rng.uniform(-0.15, 0.15);
      const double sx = rng.uniform(-0.08, 0.08);
      const double sy = rng.uniform(-0.08, 0.08);
      const double half_width = rng.uniform(0.10, 0.16);
      const double cr = std::cos(rot);
      const double sr = std::sin(rot);
      float* img = g.images.data() + idx * side * side;
      for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
          // Pixel -> glyph coordinates through the inverse jitter.
          double ux = (j - c) / radius - sx;
          double uy = (c - i) / radius - sy;
          const double rx = cr * ux + sr * uy;
          const double ry = -sr * ux + cr * uy;
          ux = (rx - shear * ry) / scale;
          uy = ry / scale;
          double dist = 1e9;
          for (const auto& s : strokes) {
            dist = std::min(dist, segment_distance(ux, uy, s));
          }
          const double v = std::clamp(1.0 - (dist - half_width) / aa, 0.0, 1.0);
          img[i * side + j] = static_cast<float>(v);
        }
      }
      g.labels.push_back(cls);
    }
  }
  return g;
}

Glyphs resize_glyphs(const Glyphs& g, int side) {
  const Index s0 = g.side();
  if (s0 == side) {
    return g;
  }
  Glyphs out;
  out.labels = g.labels;
  out.num_classes = g.num_classes;
  out.images = Tensor<float>(Shape{g.count(), side, side});
  const double ratio = static_cast<double>(s0) / side;
  constexpr int kSub = 4;
  for (Index n = 0; n < g.count(); ++n) {
    const float* src = g.images.data() + n * s0 * s0;
    float* dst = out.images.data() + n * side * side;
    for (int i = 0; i < side; ++i) {
      for (int j = 0; j < side; ++j) {
        double acc = 0.0;
        for (int a = 0; a < kSub; ++a) {
          for (int b = 0; b < kSub; ++b) {
            const double y = (i + (a + 0.5) / kSub) * ratio - 0.5;
            const double x = (j + (b + 0.5) / kSub) * ratio - 0.5;
            acc += bilinear(src, s0, s0, y, x);
          }
        }
        dst[i * side + j] = static_cast<float>(acc / (kSub * kSub));
      }
    }
  }
  return out;
}

Tensor<float> rotate_image(const Tensor<float>& img, double angle) {
  require(img.rank() == 2, "rotate_image: expects (h, w)");
  const Index h = img.dim(0);
  const Index w = img.dim(1);
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  Tensor<float> out(img.shape());
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      // Output (dx, dy) with y up; the source is the output rotated back by -angle.
      const double dx = j - cx;
      const double dy = cy - i;
      const double sx = ca * dx + sa * dy;
      const double sy = -sa * dx + ca * dy;
      out[i * w + j] = bilinear(img.data(), h, w, cy - sy, cx + sx);
    }
  }
  return out;
}

const std::array<std::array<int, 3>, 7>& color_classes() {
  static const std::array<std::array<int, 3>, 7> colors = [] {
    std::array<std::array<int, 3>, 7> c{};
    int k = 0;
    for (int bits = 1; bits < 8; ++bits) {
      c[static_cast<std::size_t>(k++)] = {bits & 4 ? 255 : 85, bits & 2 ? 255 : 85,
                                          bits & 1 ? 255 : 85};
    }
    return c;
  }();
  return colors;
}

double rotation_y(double x0, double y0, double freq, double t) {
  const double w = 2.0 * kPi * freq;
  return y0 * std::cos(w * t) - x0 * std::sin(w * t);
}

StreamBatch<float> Dataset::batch(const std::vector<Index>& idx) const {
  StreamBatch<float> b;
  b.x_hist = x_hist.take_rows(idx);
  b.y_hist = y_hist.take_rows(idx);
  b.y_next = y_next.take_rows(idx);
  for (Index i : idx) {
    const auto k = static_cast<std::size_t>(i);
    b.switched.push_back(switched[k]);
    b.changed.push_back(changed[k]);
    b.y_class.push_back(y_class[k]);
    b.prev_class.push_back(prev_class[k]);
    b.angle.push_back(angle[k]);
  }
  return b;
}

StreamBatch<float> Dataset::all() const {
  std::vector<Index> idx(static_cast<std::size_t>(size()));
  for (Index i = 0; i < size(); ++i) {
    idx[static_cast<std::size_t>(i)] = i;
  }
  return batch(idx);
}

Tensor<float> rotation_templates(const Glyphs& glyphs, int num_classes) {
  const Tensor<float> means = glyphs.class_means();
  require(glyphs.num_classes >= num_classes, "rotation_templates: too few classes");
  const Index s = glyphs.side();
  Tensor<float> out(Shape{num_classes, 8, s, s});
  for (int c = 0; c < num_classes; ++c) {
    const Tensor<float> base = means.row(c).reshaped({s, s});
    for (int a = 0; a < 8; ++a) {
      const Tensor<float> r = rotate_image(base, a * kPi / 4.0);
      out.flat().segment((c * 8 + a) * s * s, s * s) = r.flat();
    }
  }
  return out;
}

Dataset gen_switching_rotation(const TaskConfig& cfg, const Glyphs& glyphs, CounterRng rng, int n) {
  const int k = cfg.num_classes;
  require(glyphs.num_classes >= k, "digit source has fewer classes than task.num_classes");
  const Index s = glyphs.side();
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(k));
  for (Index i = 0; i < glyphs.count(); ++i) {
    const int c = glyphs.labels[static_cast<std::size_t>(i)];
    if (c < k) {
      by_class[static_cast<std::size_t>(c)].push_back(i);
    }
  }
  for (int c = 0; c < k; ++c) {
    require(!by_class[static_cast<std::size_t>(c)].empty(),
            "digit source missing class " + std::to_string(c));
  }
  // Every example at all eight angles.
  std::vector<Tensor<float>> rotated(static_cast<std::size_t>(glyphs.count() * 8));
  for (Index i = 0; i < glyphs.count(); ++i) {
    const Tensor<float> base = glyphs.images.row(i).reshaped({s, s});
    for (int a = 0; a < 8; ++a) {
      rotated[static_cast<std::size_t>(i * 8 + a)] = rotate_image(base, a * kPi / 4.0);
    }
  }
  Dataset d = empty_like(TaskKind::switching_rotation, n);
  d.x_hist = Tensor<float>(Shape{n, 2, 1});
  d.y_hist = Tensor<float>(Shape{n, 2, 1, s, s});
  d.y_next = Tensor<float>(Shape{n, 1, s, s});
  const Index px = s * s;
  for (int i = 0; i < n; ++i) {
    CounterRng r = rng.substream(static_cast<std::uint64_t>(i));
    const auto ui = static_cast<std::size_t>(i);
    const int c = r.below_int(k);
    const auto& pool = by_class[static_cast<std::size_t>(c)];
    const Index e = pool[static_cast<std::size_t>(r.below(pool.size()))];
    const int a = r.below_int(8);
    int c2 = c;
    Index e2 = e;
    const bool sw = r.bernoulli(cfg.switch_prob);
    if (sw) {
      c2 = r.below_int(k);
      const auto& pool2 = by_class[static_cast<std::size_t>(c2)];
      e2 = pool2[static_cast<std::size_t>(r.below(pool2.size()))];
      if (e2 == e && pool2.size() > 1) {
        // A switched digit is a different example, possibly of the same class.
        while (e2 == e) {
          e2 = pool2[static_cast<std::size_t>(r.below(pool2.size()))];
        }
      }
    }
    d.y_hist.flat().segment((i * 2 + 0) * px, px) = rotated[static_cast<std::size_t>(e * 8 + a)].flat();
    d.y_hist.flat().segment((i * 2 + 1) * px, px) =
        rotated[static_cast<std::size_t>(e * 8 + (a + 1) % 8)].flat();
    d.y_next.flat().segment(i * px, px) = rotated[static_cast<std::size_t>(e2 * 8 + (a + 2) % 8)].flat();
    d.x_hist[i * 2 + 0] = static_cast<float>(c);
    d.x_hist[i * 2 + 1] = static_cast<float>(c2);
    d.switched[ui] = sw ? 1 : 0;
    d.changed[ui] = c2 != c ? 1 : 0;
    d.y_class[ui] = c2;
    d.prev_class[ui] = c;
    d.angle[ui] = (a + 2) % 8;
  }
  return d;
}

Dataset gen_needle_haystack(const TaskConfig& cfg, CounterRng rng, int n) {
  const int side = cfg.resolved_image_size();
  const int rad = cfg.ball_radius;
  const int dn = cfg.distractors;
  require(dn >= 1, "needle_haystack needs at least one distractor (Y would be empty)");
  require(side >= 2 * rad + 4, "needle_haystack: image too small to place balls and corner pixels");
  const int groups = dn + 1;
  const int frames = 4;
  const auto& colors = color_classes();
  Dataset d = empty_like(TaskKind::needle_haystack, n);
  d.x_hist = Tensor<float>(Shape{n, 3, 3 * groups, side, side});
  d.y_hist = Tensor<float>(Shape{n, 3, 3 * dn, side, side});
  d.y_next = Tensor<float>(Shape{n, 3, side, side});
  const Index px = static_cast<Index>(side) * side;
  const double lo = rad + 1.0;
  const double hi = side - 2.0 - rad;
  std::vector<float> frame(static_cast<std::size_t>(3 * px));
  for (int i = 0; i < n; ++i) {
    CounterRng r = rng.substream(static_cast<std::uint64_t>(i));
    const auto ui = static_cast<std::size_t>(i);
    // Ball trajectories with elastic wall reflection.
    std::vector<std::array<double, 4>> balls(static_cast<std::size_t>(cfg.num_balls));
    for (auto& b : balls) {
      const double th = r.uniform(0.0, 2.0 * kPi);
      const double speed = r.uniform(0.5, 1.5);
      b = {r.uniform(lo, hi), r.uniform(lo, hi), speed * std::cos(th), speed * std::sin(th)};
    }
    const int c = r.below_int(7);
    const bool sw = r.bernoulli(cfg.switch_prob);
    const int c2 = sw ? r.below_int(7) : c;
    const int needle_group = r.below_int(groups);
    for (int f = 0; f < frames; ++f) {
      const int cls = f == frames - 1 ? c2 : c;
      std::fill(frame.begin(), frame.end(), 0.0f);
      for (const auto& b : balls) {
        for (int y = 0; y < side; ++y) {
          for (int x = 0; x < side; ++x) {
            const double dy = y - b[1];
            const double dx = x - b[0];
            if (dx * dx + dy * dy <= rad * rad + 0.5) {
              for (int ch = 0; ch < 3; ++ch) {
                frame[static_cast<std::size_t>(ch * px + y * side + x)] =
                    static_cast<float>(colors[static_cast<std::size_t>(cls)][static_cast<std::size_t>(ch)]) / 255.0f;
              }
            }
          }
        }
      }
      if (f == frames - 1) {
        std::copy(frame.begin(), frame.end(), d.y_next.data() + i * 3 * px);
      } else {
        const int needle_cls = f == frames - 2 ? c2 : c;
        int ygroup = 0;
        for (int g = 0; g < groups; ++g) {
          const int pix_cls = g == needle_group ? needle_cls : r.below_int(7);
          float* xdst = d.x_hist.data() + ((static_cast<Index>(i) * 3 + f) * 3 * groups + 3 * g) * px;
          std::copy(frame.begin(), frame.end(), xdst);
          for (int ch = 0; ch < 3; ++ch) {
            const int v = colors[static_cast<std::size_t>(pix_cls)][static_cast<std::size_t>(ch)] == 255 ? 255 : 0;
            const double u = r.uniform(0.0, 102.0);
            xdst[ch * px] = static_cast<float>(std::abs(v - u) / 255.0);
          }
          if (g != needle_group) {
            float* ydst = d.y_hist.data() + ((static_cast<Index>(i) * 3 + f) * 3 * dn + 3 * ygroup) * px;
            std::copy(xdst, xdst + 3 * px, ydst);
            ++ygroup;
          }
        }
      }
      for (auto& b : balls) {
        for (int ax = 0; ax < 2; ++ax) {
          b[static_cast<std::size_t>(ax)] += b[static_cast<std::size_t>(ax + 2)];
          if (b[static_cast<std::size_t>(ax)] < lo) {
            b[static_cast<std::size_t>(ax)] = 2 * lo - b[static_cast<std::size_t>(ax)];
            b[static_cast<std::size_t>(ax + 2)] = -b[static_cast<std::size_t>(ax + 2)];
          } else if (b[static_cast<std::size_t>(ax)] > hi) {
            b[static_cast<std::size_t>(ax)] = 2 * hi - b[static_cast<std::size_t>(ax)];
            b[static_cast<std::size_t>(ax + 2)] = -b[static_cast<std::size_t>(ax + 2)];
          }
        }
      }
    }
    d.switched[ui] = sw ? 1 : 0;
    d.changed[ui] = c2 != c ? 1 : 0;
    d.y_class[ui] = c2;
    d.prev_class[ui] = c;
  }
  return d;
}

Dataset gen_multi_sinusoids(const TaskConfig& cfg, CounterRng rng, int n) {
  const int comps = static_cast<int>(cfg.frequencies.size());
  const int total = cfg.num_points;
  const int hist = cfg.history;
  const int horizon = total - hist;
  const double h = 1.0 / cfg.sample_rate / cfg.rk4_substeps;
  Dataset d = empty_like(TaskKind::multi_sinusoids, n);
  d.x_hist = Tensor<float>(Shape{n, hist, comps});
  d.y_hist = Tensor<float>(Shape{n, hist, 1});
  d.y_next = Tensor<float>(Shape{n, horizon + 1});
  std::vector<double> signal(static_cast<std::size_t>(total));
  for (int i = 0; i < n; ++i) {
    CounterRng r = rng.substream(static_cast<std::uint64_t>(i));
    const auto ui = static_cast<std::size_t>(i);
    std::vector<double> freq = cfg.frequencies;
    r.shuffle(freq);
    std::vector<double> xs(static_cast<std::size_t>(comps)), ys(static_cast<std::size_t>(comps));
    for (int k = 0; k < comps; ++k) {
      const double y0 = r.uniform(-1.0, 1.0);
      const double sign = r.bernoulli(0.5) ? 1.0 : -1.0;
      ys[static_cast<std::size_t>(k)] = y0;
      xs[static_cast<std::size_t>(k)] = sign * std::sqrt(std::max(0.0, 1.0 - y0 * y0));
    }
    std::vector<double> freq_after = freq;
    const bool sw = r.bernoulli(cfg.switch_prob);
    bool changed = false;
    if (sw) {
      const auto j = static_cast<std::size_t>(r.below_int(comps));
      freq_after[j] = cfg.frequencies[static_cast<std::size_t>(r.below_int(comps))];
      changed = freq_after[j] != freq[j];
    }
    // Frequencies in force from point `step` onward.
    auto freq_at = [&](int step) -> const std::vector<double>& {
      return step >= hist ? freq_after : freq;
    };
    for (int t = 0; t < total; ++t) {
      double avg = 0.0;
      for (int k = 0; k < comps; ++k) {
        avg += ys[static_cast<std::size_t>(k)];
      }
      signal[static_cast<std::size_t>(t)] = avg / comps;
      const auto& fr = freq_at(t);
      for (int k = 0; k < comps; ++k) {
        const double w = 2.0 * kPi * fr[static_cast<std::size_t>(k)];
        double a = xs[static_cast<std::size_t>(k)];
        double b = ys[static_cast<std::size_t>(k)];
        for (int sub = 0; sub < cfg.rk4_substeps; ++sub) {
          // d(a, b)/dt = (w b, -w a)
          const double k1a = w * b, k1b = -w * a;
          const double k2a = w * (b + 0.5 * h * k1b), k2b = -w * (a + 0.5 * h * k1a);
          const double k3a = w * (b + 0.5 * h * k2b), k3b = -w * (a + 0.5 * h * k2a);
          const double k4a = w * (b + h * k3b), k4b = -w * (a + h * k3a);
          a += h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a);
          b += h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b);
        }
        xs[static_cast<std::size_t>(k)] = a;
        ys[static_cast<std::size_t>(k)] = b;
      }
    }
    for (int t = 0; t < hist; ++t) {
      d.y_hist[static_cast<Index>(i) * hist + t] = static_cast<float>(signal[static_cast<std::size_t>(t)]);
      const auto& fr = freq_at(t + 1);
      for (int k = 0; k < comps; ++k) {
        const double noisy = fr[static_cast<std::size_t>(k)] + r.uniform(-cfg.freq_noise, cfg.freq_noise);
        d.x_hist[(static_cast<Index>(i) * hist + t) * comps + k] = static_cast<float>(noisy);
      }
    }
    for (int t = 0; t <= horizon; ++t) {
      d.y_next[static_cast<Index>(i) * (horizon + 1) + t] =
          static_cast<float>(signal[static_cast<std::size_t>(hist - 1 + t)]);
    }
    d.switched[ui] = sw ? 1 : 0;
    d.changed[ui] = changed ? 1 : 0;
  }
  return d;
}

DatasetBundle generate_dataset(const TaskConfig& cfg) {
  cfg.validate();
  const CounterRng root(cfg.seed);
  DatasetBundle out;
  out.cfg = cfg;
  switch (cfg.kind) {
    case TaskKind::switching_rotation: {
      const int side = cfg.resolved_image_size();
      std::array<Glyphs, 3> split_glyphs;
      if (cfg.digits_path.empty()) {
        for (int s = 0; s < 3; ++s) {
          split_glyphs[static_cast<std::size_t>(s)] =
              procedural_glyphs(cfg.examples_per_class, side, cfg.seed * 4 + static_cast<std::uint64_t>(s));
        }
      } else {
        const Glyphs all = load_digits(cfg.digits_path);
        for (int s = 0; s < 3; ++s) {
          split_glyphs[static_cast<std::size_t>(s)] = resize_glyphs(
              select_examples(all, cfg.num_classes, cfg.examples_per_class, s * cfg.examples_per_class),
              side);
        }
      }
      out.train = gen_switching_rotation(cfg, split_glyphs[0], root.substream(1), cfg.n_train);
      out.val = gen_switching_rotation(cfg, split_glyphs[1], root.substream(2), cfg.n_val);
      out.test = gen_switching_rotation(cfg, split_glyphs[2], root.substream(3), cfg.n_test);
      out.templates = rotation_templates(split_glyphs[0], cfg.num_classes);
      break;
    }
    case TaskKind::needle_haystack:
      out.train = gen_needle_haystack(cfg, root.substream(1), cfg.n_train);
      out.val = gen_needle_haystack(cfg, root.substream(2), cfg.n_val);
      out.test = gen_needle_haystack(cfg, root.substream(3), cfg.n_test);
      break;
    case TaskKind::multi_sinusoids:
      out.train = gen_multi_sinusoids(cfg, root.substream(1), cfg.n_train);
      out.val = gen_multi_sinusoids(cfg, root.substream(2), cfg.n_val);
      out.test = gen_multi_sinusoids(cfg, root.substream(3), cfg.n_test);
      break;
  }
  return out;
}

}  // namespace teb

namespace teb {

namespace {

const char* const kSplits[] = {"train", "val", "test"};

Tensor<float> ints_to_tensor(const std::vector<int>& v) {
  Tensor<float> t(Shape{static_cast<Index>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) {
    t[static_cast<Index>(i)] = static_cast<float>(v[i]);
  }
  return t;
}

std::vector<int> tensor_to_ints(const Tensor<float>& t) {
  std::vector<int> v(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) {
    v[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(t[i]));
  }
  return v;
}

Archive split_archive(const Dataset& d) {
  Archive a;
  a.attrs["task"] = to_string(d.kind);
  a.tensors["x_hist"] = d.x_hist;
  a.tensors["y_hist"] = d.y_hist;
  a.tensors["y_next"] = d.y_next;
  a.tensors["meta.switched"] = ints_to_tensor(d.switched);
  a.tensors["meta.changed"] = ints_to_tensor(d.changed);
  a.tensors["meta.y_class"] = ints_to_tensor(d.y_class);
  a.tensors["meta.prev_class"] = ints_to_tensor(d.prev_class);
  a.tensors["meta.angle"] = ints_to_tensor(d.angle);
  return a;
}

Dataset split_from_archive(const Archive& a) {
  Dataset d;
  d.kind = task_kind_from_string(a.attr("task"));
  d.x_hist = a.at("x_hist");
  d.y_hist = a.at("y_hist");
  d.y_next = a.at("y_next");
  d.switched = tensor_to_ints(a.at("meta.switched"));
  d.changed = tensor_to_ints(a.at("meta.changed"));
  d.y_class = tensor_to_ints(a.at("meta.y_class"));
  d.prev_class = tensor_to_ints(a.at("meta.prev_class"));
  d.angle = tensor_to_ints(a.at("meta.angle"));
  const auto n = static_cast<std::size_t>(d.size());
  if (d.x_hist.rows() != d.size() || d.y_hist.rows() != d.size() || d.switched.size() != n ||
      d.angle.size() != n) {
    throw FormatError("dataset split: inconsistent sample counts");
  }
  return d;
}

}  // namespace

void save_dataset(const DatasetBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const Dataset* splits[] = {&bundle.train, &bundle.val, &bundle.test};
  std::string manifest = serialize_task_config(bundle.cfg);
  manifest += "\n[dataset]\nformat_version = 1\n";
  for (int s = 0; s < 3; ++s) {
    Archive a = split_archive(*splits[s]);
    if (s == 0 && bundle.templates.size() > 0) {
      a.tensors["templates"] = bundle.templates;
    }
    const std::string file = (fs::path(dir) / (std::string(kSplits[s]) + ".tebt")).string();
    a.save(file);
    manifest += std::string(kSplits[s]) + "_count = " + std::to_string(splits[s]->size()) + "\n";
    manifest += std::string(kSplits[s]) + "_crc32 = " + file_crc32(file) + "\n";
  }
  std::ofstream out(fs::path(dir) / "manifest.txt", std::ios::trunc);
  out << manifest;
  if (!out) {
    throw FormatError("cannot write manifest in '" + dir + "'");
  }
}

DatasetBundle load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.txt");
  if (!in) {
    throw FormatError("no dataset manifest in '" + dir + "'");
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto cut = text.find("\n[dataset]");
  if (cut == std::string::npos) {
    throw FormatError("dataset manifest lacks a [dataset] section");
  }
  DatasetBundle b;
  b.cfg = parse_task_config_text(text.substr(0, cut + 1));
  Dataset* splits[] = {&b.train, &b.val, &b.test};
  for (int s = 0; s < 3; ++s) {
    const std::string file = (fs::path(dir) / (std::string(kSplits[s]) + ".tebt")).string();
    const std::string key = std::string(kSplits[s]) + "_crc32 = ";
    const auto at = text.find(key, cut);
    if (at != std::string::npos) {
      const std::string want = text.substr(at + key.size(), 8);
      const std::string got = file_crc32(file);
      if (want != got) {
        throw FormatError(file + ": checksum mismatch (manifest " + want + ", file " + got + ")");
      }
    }
    const Archive a = Archive::load(file);
    *splits[s] = split_from_archive(a);
    if (s == 0 && a.tensors.count("templates")) {
      b.templates = a.at("templates");
    }
  }
  return b;
}

}  // namespace teb
