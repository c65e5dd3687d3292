#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "adnf/data.hpp"

using namespace adnf;
namespace fs = std::filesystem;

namespace {

SyntheticConfig small_scene(std::size_t frames = 6) {
  SyntheticConfig c;
  c.frames = frames;
  c.width = 24;
  c.height = 24;
  c.quadrature = 96;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adnf_test_data_" + name);
  fs::remove_all(p);
  return p;
}

double mean_abs(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(double(a.data[i]) - double(b.data[i]));
  return s / double(a.data.size());
}

void rewrite_json(const fs::path& path, const std::function<void(nlohmann::json&)>& edit) {
  auto j = nlohmann::json::parse(png::detail::read_file(path.string()));
  edit(j);
  png::detail::write_file(path.string(), j.dump());
}

const SyntheticScene& shared_scene() {
  static const SyntheticScene scene = generate_synthetic_scene(small_scene(), 7);
  return scene;
}

}  // namespace

TEST(Dataset, SaveLoadRoundTripIsExact) {
  const auto& scene = shared_scene();
  const auto dir = scratch("roundtrip");
  save_dataset(scene.dataset, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_TRUE(back == scene.dataset);
  EXPECT_TRUE(fs::exists(dir / "frames/00005.png"));
  EXPECT_TRUE(fs::exists(dir / "masks/00000.png"));
  fs::remove_all(dir);
}

TEST(Dataset, PoseCountMismatchRejected) {
  const auto dir = scratch("count");
  save_dataset(shared_scene().dataset, dir);
  rewrite_json(dir / "poses.json", [](nlohmann::json& j) { j.erase(j.size() - 1); });
  try {
    load_dataset(dir);
    FAIL() << "expected load_error";
  } catch (const load_error& e) {
    EXPECT_NE(std::string(e.what()).find("count mismatch"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("poses"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Dataset, ReflectedPoseRejected) {
  const auto dir = scratch("reflect");
  save_dataset(shared_scene().dataset, dir);
  rewrite_json(dir / "poses.json", [](nlohmann::json& j) {
    j[2]["R"] = {-1, 0, 0, 0, 1, 0, 0, 0, 1};
  });
  try {
    load_dataset(dir);
    FAIL() << "expected load_error";
  } catch (const load_error& e) {
    EXPECT_NE(std::string(e.what()).find("pose 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("det"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Dataset, MissingAssetAndBadLabelRejected) {
  const auto dir = scratch("missing");
  save_dataset(shared_scene().dataset, dir);
  fs::remove(dir / "audio.adaf");
  EXPECT_THROW(load_dataset(dir), load_error);
  save_dataset(shared_scene().dataset, dir);
  LabelImage bad = shared_scene().dataset.masks[1];
  bad.data[10] = 3;
  png::write_labels((dir / "masks/00001.png").string(), bad);
  try {
    load_dataset(dir);
    FAIL() << "expected load_error";
  } catch (const load_error& e) {
    EXPECT_NE(std::string(e.what()).find("label 3"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Synthetic, SameSeedSameDataset) {
  const auto again = generate_synthetic_scene(small_scene(), 7);
  EXPECT_TRUE(again.dataset == shared_scene().dataset);
  const auto other = generate_synthetic_scene(small_scene(), 8);
  EXPECT_FALSE(other.dataset == shared_scene().dataset);
}

TEST(Synthetic, ConstantSignalAndNoMotionGiveIdenticalFrames) {
  auto cfg = small_scene(4);
  cfg.animate_signal = false;
  cfg.rotation_scale = 0;
  cfg.translation_scale = 0;
  const auto scene = generate_synthetic_scene(cfg, 3);
  for (std::size_t f = 1; f < 4; ++f) EXPECT_EQ(scene.dataset.frames[f], scene.dataset.frames[0]);
  for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(scene.signal(double(f)), 0.0);
}

TEST(Synthetic, SignalStaysInUnitInterval) {
  const auto& scene = shared_scene();
  for (int f = 0; f < 1000; ++f) {
    EXPECT_GE(scene.signal(f), 0.0);
    EXPECT_LE(scene.signal(f), 1.0);
  }
}

TEST(Synthetic, TorsoDisabledMeansNoTorsoLabels) {
  auto cfg = small_scene(3);
  cfg.torso = false;
  const auto scene = generate_synthetic_scene(cfg, 1);
  for (const auto& m : scene.dataset.masks)
    for (auto v : m.data) EXPECT_NE(v, torso_label);
  std::size_t torso = 0;
  for (auto v : shared_scene().dataset.masks[0].data) torso += v == torso_label;
  EXPECT_GT(torso, 0u);
}

TEST(Synthetic, MasksFollowOracleAlpha) {
  const auto& scene = shared_scene();
  for (std::size_t f = 0; f < scene.dataset.frame_count(); ++f) {
    const auto o = oracle_render(scene, f, scene.config.quadrature);
    const auto& m = scene.dataset.masks[f];
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      if (o.head_alpha[i] > 0.5f) EXPECT_EQ(m.data[i], head_label);
      if (m.data[i] == background_label)
        EXPECT_LT(1 - (1 - o.head_alpha[i]) * (1 - o.torso_alpha[i]), background_alpha_max);
      if (m.data[i] == torso_label) EXPECT_GT(o.torso_alpha[i], o.head_alpha[i]);
    }
  }
}

TEST(Synthetic, FeatureRowsFollowSignal) {
  const auto& scene = shared_scene();
  for (std::size_t f = 0; f < scene.dataset.frame_count(); ++f) {
    const auto row = scene.feature_row(scene.signal(double(f)));
    for (std::size_t j = 0; j < audio_feature_dim; ++j) EXPECT_EQ(scene.dataset.audio.features(f, j), row[j]);
  }
}

TEST(Oracle, EmptySceneGivesBackground) {
  auto cfg = small_scene(2);
  cfg.head = false;
  cfg.torso = false;
  const auto scene = generate_synthetic_scene(cfg, 2);
  const auto o = oracle_render(scene, 0, 64);
  EXPECT_EQ(o.color, scene.true_background);
}

TEST(Oracle, QuadratureConverges) {
  auto cfg = small_scene(2);
  cfg.width = cfg.height = 32;
  const auto scene = generate_synthetic_scene(cfg, 4);
  const auto a = oracle_render(scene, 1, 512), b = oracle_render(scene, 1, 1024);
  EXPECT_LT(mean_abs(a.color, b.color), 1.0 / 255);
}

TEST(Oracle, HomogeneousMediumMatchesClosedForm) {
  auto cfg = small_scene(2);
  cfg.medium_density = 0.7;
  const auto scene = generate_synthetic_scene(cfg, 5);
  const auto o = oracle_render(scene, 0, 1024);
  const Rgb c = cfg.medium_color;
  for (std::size_t py : {5, 12, 18})
    for (std::size_t px : {4, 11, 20}) {
      // path length through the box from the slab intersection
      const Ray ray = generate_ray(scene.geometry, px, py);
      double t0 = scene.geometry.near, t1 = scene.geometry.far;
      for (int i = 0; i < 3; ++i) {
        if (ray.direction[i] == 0) continue;
        double a = (scene.geometry.box.min[i] - ray.origin[i]) / ray.direction[i];
        double b = (scene.geometry.box.max[i] - ray.origin[i]) / ray.direction[i];
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
      }
      const double T = std::exp(-cfg.medium_density * std::max(0.0, t1 - t0));
      const Rgb bg = scene.true_background.pixel(px, py);
      for (int k = 0; k < 3; ++k)
        EXPECT_NEAR(o.color.at(px, py, k), c[k] * (1 - T) + bg[k] * T, 2e-3) << px << "," << py;
    }
}

TEST(Oracle, LayeredMarchOfAnalyticFieldsMatches) {
  auto cfg = small_scene(3);
  cfg.width = cfg.height = 32;
  const auto scene = generate_synthetic_scene(cfg, 9);
  const auto st = scene.state(2);
  const auto ref = oracle_render(scene, st, scene.geometry, scene.true_background, 1024);
  SamplingConfig s;
  s.n_coarse = 128;
  s.n_fine = 0;
  Image layered(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const Ray ray = generate_ray(scene.geometry, x, y);
      auto head = [&](const Vec3& p, const Vec3&) { return scene.head_layer(world_to_canonical(p, st.head), st.signal); };
      auto torso = [&](const Vec3& p, const Vec3&) { return scene.torso_layer(world_to_canonical(p, st.torso)); };
      const auto h = march(head, ray, scene.true_background.pixel(x, y), s, nullptr);
      layered.set(x, y, march(torso, ray, h.color, s, nullptr).color);
    }
  EXPECT_LT(mean_abs(layered, ref.color), 2.0 / 255);
}

TEST(BuildBackground, MedianRecoversStaticBackground) {
  Rng rng(3);
  Image truth(10, 8);
  for (auto& v : truth.data) v = float(rng.uniform());
  truth = quantized(truth);
  std::vector<Image> frames;
  std::vector<LabelImage> masks;
  for (int f = 0; f < 7; ++f) {
    Image img = truth;
    LabelImage m{10, 8, std::vector<std::uint8_t>(80, 0)};
    // a foreground block sweeping left to right covers each pixel in at most 3 of 7 frames
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = std::size_t(f); x < std::min<std::size_t>(10, f + 3); ++x) {
        m.data[y * 10 + x] = 1;
        img.set(x, y, {1, 0, 1});
      }
    frames.push_back(img);
    masks.push_back(m);
  }
  EXPECT_EQ(build_background(frames, masks), truth);
}

TEST(BuildBackground, SingleAllBackgroundFrame) {
  Image img(5, 4);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i % 7) / 7.0f;
  LabelImage m{5, 4, std::vector<std::uint8_t>(20, 0)};
  EXPECT_EQ(build_background({img}, {m}), img);
}

TEST(BuildBackground, NeverBackgroundPixelsTakeNearestValue) {
  Image img(5, 1);
  for (std::size_t x = 0; x < 5; ++x) img.set(x, 0, {double(x) / 4, 0, 0});
  LabelImage m{5, 1, {0, 1, 1, 1, 0}};
  const auto bg = build_background({img}, {m});
  EXPECT_EQ(bg.at(1, 0, 0), img.at(0, 0, 0));
  EXPECT_EQ(bg.at(3, 0, 0), img.at(4, 0, 0));
}

TEST(BuildBackground, SyntheticSceneRecovered) {
  auto cfg = small_scene(40);
  cfg.width = cfg.height = 32;
  cfg.quadrature = 64;
  const auto scene = generate_synthetic_scene(cfg, 11);
  const auto bg = build_background(scene.dataset.frames, scene.dataset.masks);
  EXPECT_LT(mean_abs(bg, scene.true_background), 2.0 / 255);
}

TEST(Metrics, PsnrCapAndArithmetic) {
  Image a(4, 4, 0.3f);
  EXPECT_EQ(compute_psnr(a, a), 99.0);
  Image b(4, 4, 0.4f);  // MSE 0.01
  EXPECT_NEAR(compute_psnr(a, b), 20.0, 1e-5);
  EXPECT_NEAR(compute_psnr(b, a), compute_psnr(a, b), 1e-12);
  EXPECT_THROW(compute_psnr(a, Image(4, 5)), contract_error);
}

TEST(Metrics, PsnrMatchesRecomputation) {
  Rng rng(1);
  Image a(9, 7), b(9, 7);
  for (auto& v : a.data) v = float(rng.uniform());
  for (auto& v : b.data) v = float(rng.uniform());
  long double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (long double)(a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  EXPECT_NEAR(compute_psnr(a, b), double(10 * std::log10(1 / (s / a.data.size()))), 1e-6);
}

TEST(Metrics, SsimIdentityNegativeAndConstants) {
  Rng rng(2);
  Image a(32, 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const double v = (x / 4 + y / 4) % 2 ? 0.85 : 0.1;  // checker, no mid grey
      a.set(x, y, {v, v, v});
    }
  EXPECT_NEAR(compute_ssim(a, a), 1.0, 1e-12);
  Image neg = a;
  for (auto& v : neg.data) v = 1 - v;
  EXPECT_LT(compute_ssim(a, neg), 0.5);
  const double c1 = 1e-4;
  EXPECT_NEAR(compute_ssim(Image(16, 16, 0.5f), Image(16, 16, 0.6f)),
              (2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1), 1e-6);
  EXPECT_THROW(compute_ssim(a, Image(31, 32)), contract_error);
}
