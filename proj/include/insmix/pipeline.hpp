#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "insmix/compositor.hpp"
#include "insmix/gan.hpp"
#include "insmix/io.hpp"
#include "insmix/perturb.hpp"

namespace insmix {

using json = nlohmann::json;

enum class Stage { paste, perturb, smooth };

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::paste: return "paste";
    case Stage::perturb: return "perturb";
    case Stage::smooth: return "smooth";
  }
  return "?";
}

inline Stage stage_from_name(const std::string& s) {
  if (s == "paste") return Stage::paste;
  if (s == "perturb") return Stage::perturb;
  if (s == "smooth") return Stage::smooth;
  throw ConfigError("unknown stage: " + s);
}

struct PipelineConfig {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  int repetitions = 4;
  std::vector<Stage> stages{Stage::paste, Stage::perturb, Stage::smooth};
  CompositorConfig compositor;
  PerturbConfig perturb;
  GanConfig gan;
  std::optional<std::filesystem::path> gan_checkpoint;

  void validate() const {
    if (stages.empty()) throw ConfigError("pipeline: stages must be non-empty");
    if (repetitions < 1) throw ConfigError("pipeline: repetitions must be >= 1");
    compositor.validate();
    perturb.validate();
    gan.validate();
  }
};

inline PipelineConfig parse_pipeline_config(const json& j) {
  PipelineConfig cfg;
  if (j.contains("input_dir")) cfg.input_dir = j.at("input_dir").get<std::string>();
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("repetitions")) cfg.repetitions = j.at("repetitions").get<int>();
  if (j.contains("stages")) {
    cfg.stages.clear();
    for (const auto& s : j.at("stages")) cfg.stages.push_back(stage_from_name(s.get<std::string>()));
  }
  if (j.contains("ssd")) {
    const auto& s = j.at("ssd");
    cfg.compositor.ssd.epsilon = s.at("epsilon").get<double>();
    cfg.compositor.ssd.rho = s.at("rho").get<double>();
    cfg.compositor.ssd.delta = s.at("delta").get<double>();
    cfg.compositor.ssd.gamma = s.at("gamma").get<double>();
  }
  if (j.contains("compositor")) {
    const auto& c = j.at("compositor");
    if (c.contains("beta")) cfg.compositor.beta = c.at("beta").get<double>();
    if (c.contains("max_attempts")) cfg.compositor.max_attempts = c.at("max_attempts").get<int>();
    if (c.contains("occlusion_cap")) cfg.compositor.occlusion_cap = c.at("occlusion_cap").get<double>();
    if (c.contains("enable_transforms")) cfg.compositor.enable_transforms = c.at("enable_transforms").get<bool>();
    if (c.contains("exclude_same_source")) cfg.compositor.exclude_same_source = c.at("exclude_same_source").get<bool>();
  }
  if (j.contains("perturb")) {
    const auto& p = j.at("perturb");
    if (p.contains("alpha")) cfg.perturb.alpha = p.at("alpha").get<double>();
    if (p.contains("patch_size")) cfg.perturb.patch_size = p.at("patch_size").get<int>();
  }
  if (j.contains("gan")) {
    const auto& g = j.at("gan");
    if (g.contains("margin")) cfg.gan.margin = g.at("margin").get<double>();
    if (g.contains("lambda")) cfg.gan.lambda = g.at("lambda").get<double>();
    if (g.contains("base_channels")) cfg.gan.base_channels = g.at("base_channels").get<long>();
    if (g.contains("crop")) cfg.gan.crop = g.at("crop").get<long>();
    if (g.contains("steps")) cfg.gan.steps = g.at("steps").get<long>();
    if (g.contains("lr_g")) cfg.gan.lr_g = g.at("lr_g").get<double>();
    if (g.contains("lr_d")) cfg.gan.lr_d = g.at("lr_d").get<double>();
  }
  cfg.gan.seed = cfg.seed;
  if (j.contains("gan_checkpoint")) cfg.gan_checkpoint = j.at("gan_checkpoint").get<std::string>();
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config: " + path.string());
  json j = json::parse(is);
  PipelineConfig cfg = parse_pipeline_config(j);
  // INSMIX_SEED overrides the config seed
  if (const char* env = std::getenv("INSMIX_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
    cfg.gan.seed = cfg.seed;
  }
  return cfg;
}

inline json config_to_json(const PipelineConfig& cfg) {
  json j;
  j["input_dir"] = cfg.input_dir.string();
  j["output_dir"] = cfg.output_dir.string();
  j["seed"] = cfg.seed;
  j["repetitions"] = cfg.repetitions;
  json stages = json::array();
  for (Stage s : cfg.stages) stages.push_back(stage_name(s));
  j["stages"] = stages;
  j["ssd"] = {{"epsilon", cfg.compositor.ssd.epsilon},
              {"rho", cfg.compositor.ssd.rho},
              {"delta", cfg.compositor.ssd.delta},
              {"gamma", cfg.compositor.ssd.gamma}};
  j["compositor"] = {{"beta", cfg.compositor.beta},
                     {"max_attempts", cfg.compositor.max_attempts},
                     {"occlusion_cap", cfg.compositor.occlusion_cap},
                     {"enable_transforms", cfg.compositor.enable_transforms},
                     {"exclude_same_source", cfg.compositor.exclude_same_source}};
  j["perturb"] = {{"alpha", cfg.perturb.alpha}, {"patch_size", cfg.perturb.patch_size}};
  j["gan"] = {{"margin", cfg.gan.margin},     {"lambda", cfg.gan.lambda},
              {"base_channels", cfg.gan.base_channels}, {"crop", cfg.gan.crop},
              {"steps", cfg.gan.steps},       {"lr_g", cfg.gan.lr_g},
              {"lr_d", cfg.gan.lr_d}};
  if (cfg.gan_checkpoint) j["gan_checkpoint"] = cfg.gan_checkpoint->string();
  return j;
}

// ---- manifest -----------------------------------------------------------------

inline json placement_to_json(const Placement& p) {
  return json{{"template_source", p.tmpl.source_id},
              {"template_label", p.tmpl.label},
              {"flip_h", p.transform.flip_h},
              {"flip_v", p.transform.flip_v},
              {"rot90_k", p.transform.rot90_k},
              {"target", {p.target_cx, p.target_cy}},
              {"anchor_label", p.anchor_label},
              {"new_label", p.new_label}};
}

struct ManifestRecord {
  std::string input_id;
  std::filesystem::path input_image, input_label;
  std::filesystem::path output_image, output_label;
  std::uint64_t sample_seed = 0;
  std::size_t image_index = 0;
  int repetition = 0;
  json placements = json::array();
  json shuffle;  // {cells, perm, patch_size, grid_w} or null
  bool smoothed = false;

  json to_json() const {
    json j;
    j["input_id"] = input_id;
    j["input_image"] = input_image.string();
    j["input_label"] = input_label.string();
    j["output_image"] = output_image.string();
    j["output_label"] = output_label.string();
    j["sample_seed"] = sample_seed;
    j["image_index"] = image_index;
    j["repetition"] = repetition;
    j["placements"] = placements;
    j["shuffle"] = shuffle;
    j["smoothed"] = smoothed;
    return j;
  }
};

// ---- augmentation run -----------------------------------------------------------

struct AugmentResult {
  std::filesystem::path manifest_path;
  long total_placements = 0;
  long samples = 0;
};

inline AugmentResult run_augment(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();

  bool wants_smooth =
      std::find(cfg.stages.begin(), cfg.stages.end(), Stage::smooth) != cfg.stages.end();
  std::optional<GanParams> gan_params;
  if (wants_smooth) {
    if (!cfg.gan_checkpoint) throw CheckpointError("smooth stage requires gan_checkpoint");
    try {
      gan_params = load_checkpoint(*cfg.gan_checkpoint);
    } catch (const IoError& e) {
      throw CheckpointError(e.what());
    }
  }

  auto pairs = find_pairs(cfg.input_dir);
  if (pairs.empty()) throw IoError("no image/label pairs found in " + cfg.input_dir.string());

  std::vector<LabeledImage> dataset;
  dataset.reserve(pairs.size());
  for (const auto& [img, lbl] : pairs) dataset.push_back(load_labeled_image(img, lbl));

  bool wants_paste =
      std::find(cfg.stages.begin(), cfg.stages.end(), Stage::paste) != cfg.stages.end();
  std::optional<InstanceBank> bank;
  if (wants_paste) bank = InstanceBank::build(dataset);

  fs::create_directories(cfg.output_dir);
  AugmentResult result;
  result.manifest_path = cfg.output_dir / "manifest.jsonl";
  std::ofstream manifest(result.manifest_path);
  if (!manifest) throw IoError("cannot write manifest: " + result.manifest_path.string());
  manifest << json{{"config", config_to_json(cfg)}}.dump() << '\n';

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      std::uint64_t sseed = derive_stream_seed(cfg.seed, i, static_cast<std::uint64_t>(rep));
      Rng rng(sseed);

      LabeledImage current = dataset[i];
      ManifestRecord rec;
      rec.input_id = current.id;
      rec.input_image = pairs[i].first;
      rec.input_label = pairs[i].second;
      rec.sample_seed = sseed;
      rec.image_index = i;
      rec.repetition = rep;

      Mask template_mask(current.height(), current.width());
      for (Stage st : cfg.stages) {
        if (st == Stage::paste) {
          PlacementPlan plan = propose_placements(current, *bank, cfg.compositor, rng);
          current = apply_plan(current, plan);
          template_mask = plan.template_mask;
          for (const auto& p : plan.placements) rec.placements.push_back(placement_to_json(p));
          result.total_placements += static_cast<long>(plan.placements.size());
        } else if (st == Stage::perturb) {
          PerturbRecord prec;
          current = perturb_background(current, cfg.perturb, rng, &prec);
          rec.shuffle = json{{"cells", prec.cells},
                             {"perm", prec.perm},
                             {"patch_size", prec.patch_size},
                             {"grid_w", prec.grid_w}};
        } else {
          // smooth-only runs re-render the full foreground
          Mask m = template_mask;
          if (!wants_paste) {
            for (int y = 0; y < current.height(); ++y)
              for (int x = 0; x < current.width(); ++x)
                m.at(y, x) = current.labels.at(y, x) != 0 ? 1 : 0;
          }
          current = smooth(current, m, *gan_params);
          rec.smoothed = true;
        }
      }

      std::string stem = current.id + "_aug" + std::to_string(rep);
      rec.output_image = cfg.output_dir / (stem + ".png");
      rec.output_label = cfg.output_dir / (stem + "_label.png");
      save_labeled_image(current, rec.output_image, rec.output_label);
      manifest << rec.to_json().dump() << '\n';
      ++result.samples;
    }
  }
  if (!manifest) throw IoError("manifest write failed");
  return result;
}

// ---- verification ----------------------------------------------------------------

struct VerifyReport {
  long records = 0;
  long placements_checked = 0;
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

namespace verify_detail {

// Independent route for the Eq.-style checks: recomputes scale, shape and
// distance with plain pixel enumeration, separate from check_ssd.
inline void recheck_placement(const Instance& anchor, const Instance& shaped, double tx, double ty,
                              const SsdConfig& ssd, const std::string& ctx,
                              std::vector<std::string>& violations) {
  double ao = static_cast<double>(anchor.mask.area());
  double at = static_cast<double>(shaped.mask.area());
  double scale = std::max(ao, at) / std::min(ao, at);
  if (scale > ssd.epsilon) violations.push_back(ctx + ": scale violation (" + std::to_string(scale) + ")");

  // brute-force symmetric difference over aligned point sets
  auto points = [](const Mask& m) {
    std::vector<std::pair<long, long>> pts;
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        if (m.at(y, x)) {
          pts.emplace_back(x, y);
          sx += x;
          sy += y;
        }
    return std::make_pair(pts, std::make_pair(sx / pts.size(), sy / pts.size()));
  };
  auto [po, co] = points(anchor.mask);
  auto [pt, ct] = points(shaped.mask);
  long dx = std::llround(co.first - ct.first), dy = std::llround(co.second - ct.second);
  std::set<std::pair<long, long>> so(po.begin(), po.end()), st;
  for (auto [x, y] : pt) st.emplace(x + dx, y + dy);
  long diff = 0;
  for (const auto& pnt : so) diff += st.count(pnt) == 0;
  for (const auto& pnt : st) diff += so.count(pnt) == 0;
  double shape = static_cast<double>(diff) / std::max(ao, at);
  if (shape > ssd.rho) violations.push_back(ctx + ": shape violation (" + std::to_string(shape) + ")");

  double dist = std::sqrt((anchor.cx - tx) * (anchor.cx - tx) + (anchor.cy - ty) * (anchor.cy - ty));
  if (dist < ssd.delta || dist > ssd.gamma)
    violations.push_back(ctx + ": distance violation (" + std::to_string(dist) + ")");
}

}  // namespace verify_detail

inline VerifyReport run_verify(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot read manifest: " + manifest_path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty manifest: " + manifest_path.string());
  json header = json::parse(line);
  PipelineConfig cfg = parse_pipeline_config(header.at("config"));

  auto pairs = find_pairs(cfg.input_dir);
  std::vector<LabeledImage> dataset;
  for (const auto& [img, lbl] : pairs) dataset.push_back(load_labeled_image(img, lbl));

  // instances keyed by (source id, label) for template reconstruction
  std::map<std::pair<std::string, std::uint16_t>, Instance> instances;
  for (const auto& img : dataset)
    for (auto& ins : extract_instances(img)) instances[{ins.source_id, ins.label}] = ins;

  VerifyReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ++report.records;
    std::string ctx = j.at("input_id").get<std::string>() + "#" +
                      std::to_string(j.at("repetition").get<int>());

    LabeledImage input = load_labeled_image(j.at("input_image").get<std::string>(),
                                            j.at("input_label").get<std::string>());
    LabeledImage output;
    try {
      output = load_labeled_image(j.at("output_image").get<std::string>(),
                                  j.at("output_label").get<std::string>());
    } catch (const Error& e) {
      report.violations.push_back(ctx + ": missing artifact: " + e.what());
      continue;
    }

    auto originals = extract_instances(input);
    auto anchor_of = [&](std::uint16_t label) -> const Instance* {
      for (const auto& o : originals)
        if (o.label == label) return &o;
      return nullptr;
    };

    Mask template_mask(input.height(), input.width());
    for (const auto& pj : j.at("placements")) {
      ++report.placements_checked;
      auto key = std::make_pair(pj.at("template_source").get<std::string>(),
                                static_cast<std::uint16_t>(pj.at("template_label").get<int>()));
      auto ti = instances.find(key);
      if (ti == instances.end()) {
        report.violations.push_back(ctx + ": template not found in input dataset");
        continue;
      }
      Transform t{pj.at("flip_h").get<bool>(), pj.at("flip_v").get<bool>(),
                  pj.at("rot90_k").get<int>()};
      Instance shaped = transform_instance(ti->second, t);
      double tx = pj.at("target")[0].get<double>(), ty = pj.at("target")[1].get<double>();
      const Instance* anchor = anchor_of(static_cast<std::uint16_t>(pj.at("anchor_label").get<int>()));
      if (!anchor) {
        report.violations.push_back(ctx + ": anchor label not found in input");
        continue;
      }
      verify_detail::recheck_placement(*anchor, shaped, tx, ty, cfg.compositor.ssd, ctx,
                                       report.violations);

      int px = static_cast<int>(std::llround(tx - shaped.rel_cx()));
      int py = static_cast<int>(std::llround(ty - shaped.rel_cy()));
      if (px < 0 || py < 0 || px + shaped.w > input.width() || py + shaped.h > input.height()) {
        report.violations.push_back(ctx + ": placement footprint out of bounds");
        continue;
      }
      for (int y = 0; y < shaped.h; ++y)
        for (int x = 0; x < shaped.w; ++x)
          if (shaped.mask.at(y, x)) template_mask.at(py + y, px + x) = 1;
    }

    // smooth-only samples re-render the whole foreground
    if (j.at("smoothed").get<bool>() && j.at("placements").empty()) {
      for (int y = 0; y < input.height(); ++y)
        for (int x = 0; x < input.width(); ++x)
          if (input.labels.at(y, x) != 0) template_mask.at(y, x) = 1;
    }

    // shuffled-cell bookkeeping
    Mask shuffled(input.height(), input.width());
    if (j.contains("shuffle") && !j.at("shuffle").is_null() && j.at("shuffle").contains("cells")) {
      int ps = j.at("shuffle").at("patch_size").get<int>();
      int gw = j.at("shuffle").at("grid_w").get<int>();
      for (long cell : j.at("shuffle").at("cells").get<std::vector<long>>()) {
        int cx = static_cast<int>(cell % gw) * ps, cy = static_cast<int>(cell / gw) * ps;
        for (int y = 0; y < ps; ++y)
          for (int x = 0; x < ps; ++x) shuffled.at(cy + y, cx + x) = 1;
      }
    }

    // immutability: outside pasted footprints and shuffled cells the output
    // matches the input bit-exactly; labels may change only under pastes
    if (output.height() != input.height() || output.width() != input.width()) {
      report.violations.push_back(ctx + ": output extent mismatch");
      continue;
    }
    bool pix_ok = true, lbl_ok = true, fg_ok = true;
    for (int y = 0; y < input.height() && (pix_ok || lbl_ok || fg_ok); ++y)
      for (int x = 0; x < input.width(); ++x) {
        if (!template_mask.at(y, x)) {
          if (lbl_ok && output.labels.at(y, x) != input.labels.at(y, x)) lbl_ok = false;
          if (pix_ok && !shuffled.at(y, x))
            for (int c = 0; c < 3; ++c)
              if (output.pixels.at(y, x, c) != input.pixels.at(y, x, c)) {
                pix_ok = false;
                break;
              }
        }
        if (fg_ok && shuffled.at(y, x) && output.labels.at(y, x) != 0) fg_ok = false;
      }
    if (!pix_ok) report.violations.push_back(ctx + ": pixels changed outside template/shuffle regions");
    if (!lbl_ok) report.violations.push_back(ctx + ": labels changed outside template regions");
    if (!fg_ok) report.violations.push_back(ctx + ": shuffled cell overlaps foreground");
  }
  return report;
}

}  // namespace insmix
