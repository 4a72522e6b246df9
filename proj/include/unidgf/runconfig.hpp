#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>

#include "unidgf/common.hpp"

namespace unidgf {

struct ModelConfig {
  std::string arch = "encdec";  // encdec | declonly
  int dim = 128;
  int heads = 4;
  int ffn = 256;
  int enc_layers = 2;
  int dec_layers = 2;
  int qformer_layers = 2;
  int qformer_heads = 4;
  int roi_size = 7;
  int roi_samples = 2;
  int query_tokens = 128;
  int backbone_dim = 64;
  int backbone_stride = 8;
  int det_hidden = 96;
  double det_prior = 24.0;
};

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 50;
  int batch_objects = 16;
  double det_lr = 2e-3;
  int det_epochs = 12;
  double det_pos_weight = 8.0;
  double det_offset_weight = 2.0;
};

struct ProtocolConfig {
  std::string protocol = "gtbox";  // gtbox | e2e
  std::string proposals = "model"; // model | gt (e2e protocol)
  int beam = 4;
  int topm = 4;
  double nms_thresh = 0.5;
  double obj_floor = 0.3;
  double iou_thresh = 0.85;
};

struct DataGenConfig {
  int scenes = 6000;
  double split = 5.0 / 6.0;
  int image_size = 96;
  int min_objects = 1;
  int max_objects = 3;
};

struct RunConfig {
  uint64_t seed = 1;
  std::string hierarchy;  // hierarchy spec path; empty selects the toy tree
  std::string data;       // dataset directory
  std::string out;
  std::string ckpt;
  ModelConfig model;
  OptimConfig optim;
  ProtocolConfig protocol;
  DataGenConfig datagen;
};

// Parses a config file; absent fields keep their defaults, unknown fields are
// rejected so typos do not silently fall back.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& doc);

}  // namespace unidgf
