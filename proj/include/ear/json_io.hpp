#pragma once

#include <json.hpp>

#include "ear/metrics.hpp"
#include "ear/reconnet.hpp"
#include "ear/scalest.hpp"

namespace ear {

void to_json(nlohmann::json& j, const MetricConfig& c);
void from_json(const nlohmann::json& j, MetricConfig& c);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const ScaleModel& m);
void from_json(const nlohmann::json& j, ScaleModel& m);

namespace nn {
void to_json(nlohmann::json& j, const ReconNetConfig& c);
void from_json(const nlohmann::json& j, ReconNetConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);
}  // namespace nn

}  // namespace ear
