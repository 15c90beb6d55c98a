#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "insmix/baselines.hpp"
#include "insmix/pipeline.hpp"

namespace {

int cmd_bank_build(const std::string& data_dir, const std::string& out_file) {
  auto pairs = insmix::find_pairs(data_dir);
  if (pairs.empty()) {
    std::cerr << "no image/label pairs in " << data_dir << "\n";
    return 4;
  }
  std::vector<insmix::LabeledImage> dataset;
  for (const auto& [img, lbl] : pairs) dataset.push_back(insmix::load_labeled_image(img, lbl));
  auto bank = insmix::InstanceBank::build(dataset);

  std::ofstream os(out_file);
  if (!os) {
    std::cerr << "cannot write " << out_file << "\n";
    return 4;
  }
  for (std::size_t i : bank.area_index()) {
    const auto& e = bank.entries()[i];
    os << insmix::json{{"source", e.source_id}, {"label", e.label},
                       {"bbox", {e.x, e.y, e.w, e.h}},  {"area", e.area},
                       {"centroid", {e.cx, e.cy}}}
              .dump()
       << '\n';
  }
  std::cout << "bank: " << bank.size() << " instances -> " << out_file << "\n";
  return 0;
}

int cmd_augment(const std::string& config_path) {
  auto cfg = insmix::load_pipeline_config(config_path);
  auto result = insmix::run_augment(cfg);
  std::cout << "augmented " << result.samples << " samples, " << result.total_placements
            << " placements; manifest: " << result.manifest_path.string() << "\n";
  return 0;
}

int cmd_gan_train(const std::string& config_path, const std::string& out_ckpt,
                  const std::string& metrics_path) {
  auto cfg = insmix::load_pipeline_config(config_path);
  auto pairs = insmix::find_pairs(cfg.input_dir);
  std::vector<insmix::LabeledImage> dataset;
  for (const auto& [img, lbl] : pairs) dataset.push_back(insmix::load_labeled_image(img, lbl));
  auto bank = insmix::InstanceBank::build(dataset);

  std::ofstream metrics;
  std::ostream* mptr = nullptr;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path);
    mptr = &metrics;
  }
  auto result = insmix::train(dataset, bank, cfg.gan, cfg.compositor, mptr);
  insmix::save_checkpoint(result.params, out_ckpt);
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::cout << "trained " << last.step << " steps; final loss_d=" << last.loss_d
              << " recon=" << last.recon << "\n";
  }
  std::cout << "checkpoint: " << out_ckpt << "\n";
  return 0;
}

int cmd_gan_smooth(const std::string& config_path, const std::string& ckpt) {
  auto cfg = insmix::load_pipeline_config(config_path);
  cfg.stages = {insmix::Stage::smooth};
  cfg.gan_checkpoint = ckpt;
  auto result = insmix::run_augment(cfg);
  std::cout << "smoothed " << result.samples << " samples; manifest: "
            << result.manifest_path.string() << "\n";
  return 0;
}

int cmd_verify(const std::string& manifest) {
  auto report = insmix::run_verify(manifest);
  std::cout << "records: " << report.records << ", placements checked: "
            << report.placements_checked << ", violations: " << report.violations.size() << "\n";
  for (const auto& v : report.violations) std::cout << "  " << v << "\n";
  return report.ok() ? 0 : 1;
}

int cmd_baseline(const std::string& method, const std::string& a_path, const std::string& b_path,
                 const std::string& out_path, double lambda, double cow_sigma, double cow_p,
                 std::uint64_t seed) {
  using namespace insmix;
  auto load_rgb = [](const std::string& p) {
    cv::Mat m = cv::imread(p, cv::IMREAD_COLOR);
    if (m.empty()) throw IoError("cannot read image: " + p);
    Image8 img(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
      for (int x = 0; x < m.cols; ++x) {
        auto px = m.at<cv::Vec3b>(y, x);
        img.at(y, x, 0) = px[2];
        img.at(y, x, 1) = px[1];
        img.at(y, x, 2) = px[0];
      }
    return img;
  };
  auto save_rgb = [](const Image8& img, const std::string& p) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        m.at<cv::Vec3b>(y, x) = cv::Vec3b(img.at(y, x, 2), img.at(y, x, 1), img.at(y, x, 0));
    if (!cv::imwrite(p, m)) throw IoError("cannot write image: " + p);
  };

  Image8 a = load_rgb(a_path);
  Rng rng(seed);
  Image8 out;
  if (method == "mixup" || method == "cutmix" || method == "cowmix") {
    if (b_path.empty()) throw ConfigError(method + " requires --b");
    Image8 b = load_rgb(b_path);
    if (method == "mixup") out = mixup(a, b, lambda);
    else if (method == "cutmix") {
      Rect r{static_cast<int>(rng.index(a.w)), static_cast<int>(rng.index(a.h)), 0, 0};
      r.w = static_cast<int>(rng.index(a.w - r.x)) + 1;
      r.h = static_cast<int>(rng.index(a.h - r.y)) + 1;
      out = cutmix(a, b, r);
    } else {
      out = cowmix(a, b, cow_mask(a.h, a.w, cow_sigma, cow_p, rng));
    }
  } else if (method == "cutout") {
    Rect r{static_cast<int>(rng.index(a.w)), static_cast<int>(rng.index(a.h)), 0, 0};
    r.w = static_cast<int>(rng.index(a.w - r.x)) + 1;
    r.h = static_cast<int>(rng.index(a.h - r.y)) + 1;
    out = cutout(a, r);
  } else if (method == "cowout") {
    out = cowout(a, cow_mask(a.h, a.w, cow_sigma, cow_p, rng));
  } else {
    throw ConfigError("unknown baseline method: " + method);
  }
  save_rgb(out, out_path);
  std::cout << method << " -> " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"InsMix: morphology-constrained copy-paste-smooth augmentation for nuclei instance segmentation"};
  app.require_subcommand(1);

  auto* bank = app.add_subcommand("bank", "instance bank utilities");
  auto* bank_build = bank->add_subcommand("build", "build a bank summary from a dataset");
  std::string data_dir, out_file;
  bank_build->add_option("--data", data_dir, "dataset directory")->required();
  bank_build->add_option("--out", out_file, "output JSONL file")->required();

  auto* augment = app.add_subcommand("augment", "run the augmentation pipeline");
  std::string aug_config;
  augment->add_option("--config", aug_config, "pipeline config JSON")->required();

  auto* gan = app.add_subcommand("gan", "smooth-GAN training and inference");
  auto* gan_train = gan->add_subcommand("train", "train the smooth-GAN");
  std::string train_config, train_out, train_metrics;
  gan_train->add_option("--config", train_config, "pipeline config JSON")->required();
  gan_train->add_option("--out", train_out, "output checkpoint")->required();
  gan_train->add_option("--metrics", train_metrics, "training metrics CSV");
  auto* gan_smooth = gan->add_subcommand("smooth", "smooth the full foreground of each input");
  std::string smooth_config, smooth_ckpt;
  gan_smooth->add_option("--config", smooth_config, "pipeline config JSON")->required();
  gan_smooth->add_option("--ckpt", smooth_ckpt, "trained checkpoint")->required();

  auto* baseline = app.add_subcommand("baseline", "Mix-based reference augmentations");
  std::string method, a_path, b_path, baseline_out;
  double lambda = 0.5, cow_sigma = 8.0, cow_p = 0.5;
  std::uint64_t bseed = 0;
  baseline->add_option("--method", method, "mixup|cutout|cutmix|cowout|cowmix")->required();
  baseline->add_option("--a", a_path, "first image")->required();
  baseline->add_option("--b", b_path, "second image (mix methods)");
  baseline->add_option("--out", baseline_out, "output image")->required();
  baseline->add_option("--lambda", lambda, "mixup weight");
  baseline->add_option("--cow-sigma", cow_sigma, "cow mask Gaussian scale");
  baseline->add_option("--cow-p", cow_p, "cow mask coverage");
  baseline->add_option("--seed", bseed, "rng seed");

  auto* verify = app.add_subcommand("verify", "audit a manifest against its inputs/outputs");
  std::string manifest_path;
  verify->add_option("--manifest", manifest_path, "manifest JSONL")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (bank_build->parsed()) return cmd_bank_build(data_dir, out_file);
    if (augment->parsed()) return cmd_augment(aug_config);
    if (gan_train->parsed()) return cmd_gan_train(train_config, train_out, train_metrics);
    if (gan_smooth->parsed()) return cmd_gan_smooth(smooth_config, smooth_ckpt);
    if (baseline->parsed())
      return cmd_baseline(method, a_path, b_path, baseline_out, lambda, cow_sigma, cow_p, bseed);
    if (verify->parsed()) return cmd_verify(manifest_path);
  } catch (const insmix::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const insmix::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const insmix::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const insmix::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
