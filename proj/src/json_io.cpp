#include "ear/json_io.hpp"

namespace ear {

using nlohmann::json;

void to_json(json& j, const MetricConfig& c) {
  j = json{{"scales", c.scales},           {"c", c.c},
           {"ssim_window", c.ssim_window}, {"ssim_sigma", c.ssim_sigma},
           {"ssim_k1", c.ssim_k1},         {"ssim_k2", c.ssim_k2},
           {"lamp_epsilon", c.lamp_epsilon}, {"score_smooth_radius", c.score_smooth_radius}};
}

void from_json(const json& j, MetricConfig& c) {
  c.scales = j.at("scales").get<int>();
  c.c = j.at("c").get<double>();
  c.ssim_window = j.at("ssim_window").get<int>();
  c.ssim_sigma = j.at("ssim_sigma").get<double>();
  c.ssim_k1 = j.at("ssim_k1").get<double>();
  c.ssim_k2 = j.at("ssim_k2").get<double>();
  c.lamp_epsilon = j.at("lamp_epsilon").get<double>();
  c.score_smooth_radius = j.at("score_smooth_radius").get<int>();
}

void to_json(json& j, const LossWeights& w) { j = json{{"l2", w.l2}, {"ssim", w.ssim}, {"msgms", w.msgms}}; }

void from_json(const json& j, LossWeights& w) {
  w.l2 = j.at("l2").get<double>();
  w.ssim = j.at("ssim").get<double>();
  w.msgms = j.at("msgms").get<double>();
}

void to_json(json& j, const ScaleModel& m) {
  j = json{{"slope", m.slope}, {"intercept", m.intercept}, {"category", to_string(m.category)}};
}

void from_json(const json& j, ScaleModel& m) {
  m.slope = j.at("slope").get<double>();
  m.intercept = j.at("intercept").get<double>();
  m.category = parse_category_kind(j.at("category").get<std::string>());
}

namespace nn {

void to_json(json& j, const ReconNetConfig& c) {
  j = json{{"in_channels", c.in_channels}, {"base_width", c.base_width},   {"kernel", c.kernel},
           {"depth", c.depth},             {"multipliers", c.multipliers}, {"leaky_slope", c.leaky_slope},
           {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps}};
}

void from_json(const json& j, ReconNetConfig& c) {
  c.in_channels = j.at("in_channels").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.depth = j.at("depth").get<int>();
  c.multipliers = j.at("multipliers").get<std::vector<int>>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  c.bn_eps = j.at("bn_eps").get<double>();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"kernel", c.kernel},
           {"lr", c.lr},
           {"schedule", to_string(c.schedule)},
           {"warmup_steps", c.warmup_steps},
           {"sgdr_t0", c.sgdr_t0},
           {"sgdr_tmult", c.sgdr_tmult},
           {"epochs", c.epochs},
           {"batch", c.batch},
           {"seed", c.seed},
           {"momentum", c.momentum},
           {"base_width", c.base_width}};
}

void from_json(const json& j, TrainConfig& c) {
  c.kernel = j.at("kernel").get<int>();
  c.lr = j.at("lr").get<double>();
  c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.sgdr_t0 = j.at("sgdr_t0").get<int>();
  c.sgdr_tmult = j.at("sgdr_tmult").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch = j.at("batch").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.momentum = j.at("momentum").get<double>();
  c.base_width = j.at("base_width").get<int>();
}

void to_json(json& j, const AblationFlags& f) { j = json{{"hint", f.hint}, {"attention", f.attention}}; }

void from_json(const json& j, AblationFlags& f) {
  f.hint = j.at("hint").get<bool>();
  f.attention = j.at("attention").get<bool>();
}

}  // namespace nn
}  // namespace ear
