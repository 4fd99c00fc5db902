#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "teb/archive.hpp"
#include "teb/errors.hpp"
#include "teb/tasks.hpp"

using namespace teb;
namespace fs = std::filesystem;

namespace {

TaskConfig small(TaskKind kind) {
  TaskConfig c;
  c.kind = kind;
  c.n_train = 40;
  c.n_val = 10;
  c.n_test = 10;
  c.num_classes = 4;
  c.examples_per_class = 3;
  c.num_points = 30;
  c.history = 20;
  c.distractors = 2;
  c.seed = 5;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("teb_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

bool same(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("split shapes per task") {
  SUBCASE("rotation") {
    const DatasetBundle b = generate_dataset(small(TaskKind::switching_rotation));
    CHECK(b.train.x_hist.shape() == Shape{40, 2, 1});
    CHECK(b.train.y_hist.shape() == Shape{40, 2, 1, 14, 14});
    CHECK(b.train.y_next.shape() == Shape{40, 1, 14, 14});
    CHECK(b.val.size() == 10);
    CHECK(b.templates.shape() == Shape{4, 8, 14, 14});
  }
  SUBCASE("needle") {
    const DatasetBundle b = generate_dataset(small(TaskKind::needle_haystack));
    CHECK(b.train.x_hist.shape() == Shape{40, 3, 9, 16, 16});
    CHECK(b.train.y_hist.shape() == Shape{40, 3, 6, 16, 16});
    CHECK(b.train.y_next.shape() == Shape{40, 3, 16, 16});
  }
  SUBCASE("sinusoids") {
    const DatasetBundle b = generate_dataset(small(TaskKind::multi_sinusoids));
    CHECK(b.train.x_hist.shape() == Shape{40, 20, 5});
    CHECK(b.train.y_hist.shape() == Shape{40, 20, 1});
    CHECK(b.train.y_next.shape() == Shape{40, 11});
  }
}

TEST_CASE("generation is a pure function of the seed") {
  for (TaskKind k : {TaskKind::switching_rotation, TaskKind::needle_haystack, TaskKind::multi_sinusoids}) {
    TaskConfig c = small(k);
    const DatasetBundle a = generate_dataset(c), b = generate_dataset(c);
    CHECK(same(a.train.y_next, b.train.y_next));
    CHECK(same(a.test.x_hist, b.test.x_hist));
    CHECK(a.train.switched == b.train.switched);
    c.seed = 6;
    CHECK_FALSE(same(generate_dataset(c).train.y_next, a.train.y_next));
  }
}

TEST_CASE("rotation switch statistics") {
  TaskConfig c = small(TaskKind::switching_rotation);
  c.n_train = 4000;
  c.switch_prob = 0.5;
  const Dataset d = generate_dataset(c).train;
  double sw = 0, ch = 0;
  for (Index i = 0; i < d.size(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    sw += d.switched[u];
    ch += d.changed[u];
    CHECK(d.changed[u] == (d.y_class[u] != d.prev_class[u] ? 1 : 0));
    CHECK(d.x_hist[i * 2 + 1] == static_cast<float>(d.y_class[u]));
    if (!d.switched[u]) CHECK(d.changed[u] == 0);
  }
  // P(switch) = s, P(change) = s (1 - 1/K); binomial SE at n = 4000 is below 0.008.
  CHECK(std::abs(sw / 4000 - 0.5) < 0.03);
  CHECK(std::abs(ch / 4000 - 0.375) < 0.03);
}

TEST_CASE("rotation frames match the templates at the recorded angle") {
  const DatasetBundle b = generate_dataset(small(TaskKind::switching_rotation));
  // The target frame is closer to its own class template at the recorded angle than to the
  // same class at the opposite angle.
  const Index px = 14 * 14;
  int wins = 0;
  for (Index i = 0; i < b.train.size(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    auto dist = [&](int angle) {
      double s = 0;
      for (Index p = 0; p < px; ++p) {
        const double d = b.train.y_next[i * px + p] - b.templates[(b.train.y_class[u] * 8 + angle) * px + p];
        s += d * d;
      }
      return s;
    };
    wins += dist(b.train.angle[u]) < dist((b.train.angle[u] + 4) % 8);
  }
  CHECK(wins >= 36);
}

TEST_CASE("needle pixel carries the next ball color") {
  TaskConfig c = small(TaskKind::needle_haystack);
  c.switch_prob = 0.7;
  const Dataset d = generate_dataset(c).train;
  const Index side = 16, px = side * side, groups = 3;
  const auto& colors = color_classes();
  for (Index i = 0; i < d.size(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    const auto& want = colors[static_cast<std::size_t>(d.y_class[u])];
    // Ball color of Y' is the recorded class.
    bool ball_ok = false;
    for (Index p = 0; p < px && !ball_ok; ++p) {
      if (d.y_next[i * 3 * px + p] > 0) {
        ball_ok = true;
        for (Index ch = 0; ch < 3; ++ch) {
          CHECK(d.y_next[(i * 3 + ch) * px + p] == doctest::Approx(want[static_cast<std::size_t>(ch)] / 255.0));
        }
      }
    }
    CHECK(ball_ok);
    // Some group of the last input frame encodes that color in its corner pixel:
    // a 255 channel lands in [0.6, 1], a lower channel in [0, 0.4].
    bool found = false;
    for (Index g = 0; g < groups; ++g) {
      bool match = true;
      for (Index ch = 0; ch < 3; ++ch) {
        const float v = d.x_hist[((i * 3 + 2) * 3 * groups + 3 * g + ch) * px];
        CHECK((v <= 0.4f + 1e-6f || v >= 0.6f - 1e-6f));
        match = match && ((v > 0.5f) == (want[static_cast<std::size_t>(ch)] == 255));
      }
      found = found || match;
    }
    CHECK(found);
  }
}

TEST_CASE("sinusoid samples follow the closed-form rotation") {
  TaskConfig c = small(TaskKind::multi_sinusoids);
  c.frequencies = {0.3};
  c.switch_prob = 0.0;
  c.freq_noise = 0.0;
  const Dataset d = generate_dataset(c).train;
  for (Index i = 0; i < 5; ++i) {
    CHECK(d.x_hist[i * 20] == doctest::Approx(0.3));
    const double y0 = d.y_hist[i * 20];
    const double x0 = std::sqrt(1 - y0 * y0);
    double best = 1e9;
    for (double sign : {1.0, -1.0}) {
      double worst = 0;
      for (int t = 0; t < 20; ++t) {
        worst = std::max(worst, std::abs(d.y_hist[i * 20 + t] - rotation_y(sign * x0, y0, 0.3, t / 20.0)));
      }
      best = std::min(best, worst);
    }
    CHECK(best < 1e-5);
    // The target starts at the last history sample.
    CHECK(d.y_next[i * 11] == d.y_hist[i * 20 + 19]);
  }
  // Closed form against direct trigonometry: b(t) = y0 cos wt - x0 sin wt.
  const double w = 2 * std::numbers::pi * 0.7;
  CHECK(rotation_y(0.6, 0.8, 0.7, 0.3) == doctest::Approx(0.8 * std::cos(w * 0.3) - 0.6 * std::sin(w * 0.3)));
}

TEST_CASE("save and load round trip with checksums") {
  const fs::path dir = scratch("roundtrip");
  const DatasetBundle b = generate_dataset(small(TaskKind::switching_rotation));
  save_dataset(b, dir.string());
  const DatasetBundle back = load_dataset(dir.string());
  CHECK(same(back.train.y_hist, b.train.y_hist));
  CHECK(same(back.test.y_next, b.test.y_next));
  CHECK(same(back.templates, b.templates));
  CHECK(back.val.changed == b.val.changed);
  CHECK(back.cfg.seed == b.cfg.seed);
  // Corrupting one byte trips the checksum.
  {
    std::fstream f(dir / "val.tebt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_dataset(dir.string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("IDX digit loader") {
  const fs::path dir = scratch("idx");
  const int n = 3, side = 4;
  {
    std::ofstream img(dir / "train-images-idx3-ubyte", std::ios::binary);
    put_be32(img, 0x00000803);
    put_be32(img, n);
    put_be32(img, side);
    put_be32(img, side);
    for (int i = 0; i < n * side * side; ++i) img.put(static_cast<char>(i % 256));
    std::ofstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
    put_be32(lab, 0x00000801);
    put_be32(lab, n);
    for (int i = 0; i < n; ++i) lab.put(static_cast<char>(7 - i));
  }
  const Glyphs g = load_digits(dir.string());
  CHECK(g.count() == 3);
  CHECK(g.side() == 4);
  CHECK(g.labels == std::vector<int>{7, 6, 5});
  CHECK(g.images[17] == doctest::Approx(17 / 255.0));
  // Truncated payload.
  fs::resize_file(dir / "train-images-idx3-ubyte", 16 + n * side * side - 5);
  CHECK_THROWS_AS(load_digits(dir.string()), FormatError);
  fs::resize_file(dir / "train-images-idx3-ubyte", 6);
  CHECK_THROWS_AS(load_digits(dir.string()), FormatError);
  CHECK_THROWS_AS(load_digits((dir / "missing").string()), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("distractor pixels carry no information about the next color") {
  TaskConfig c = small(TaskKind::needle_haystack);
  c.distractors = 1;
  c.image_size = 8;
  c.ball_radius = 1;
  c.n_train = 10000;
  const Dataset d = generate_dataset(c).train;
  const Index px = 64;
  // Decoded corner color of the distractor group (the only Y group) in the last input frame.
  std::vector<std::vector<double>> counts(8, std::vector<double>(7, 0.0));
  for (Index i = 0; i < d.size(); ++i) {
    int code = 0;
    for (Index ch = 0; ch < 3; ++ch) code = 2 * code + (d.y_hist[((i * 3 + 2) * 3 + ch) * px] > 0.5f);
    counts[static_cast<std::size_t>(code)][static_cast<std::size_t>(d.y_class[static_cast<std::size_t>(i)])] += 1;
  }
  double mi = 0;
  const double n = static_cast<double>(d.size());
  std::vector<double> row(8, 0.0), col(7, 0.0);
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 7; ++b) {
      row[a] += counts[a][b];
      col[b] += counts[a][b];
    }
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 7; ++b)
      if (counts[a][b] > 0) mi += counts[a][b] / n * std::log(counts[a][b] * n / (row[a] * col[b]));
  // Plug-in bias for independent variables is about (7 - 1)(7 - 1) / (2n) = 0.0018 nats.
  CHECK(mi < 0.006);
  CHECK(row[0] == 0);  // (85, 85, 85) is not a color class
}
