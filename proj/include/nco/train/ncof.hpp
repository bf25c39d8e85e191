#pragma once

#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "nco/env/env.hpp"
#include "nco/tensor/autodiff.hpp"

namespace nco {

/// Container layout:
///
///   "NCOF1" | u32 LE header length | JSON header | raw LE arrays in header order
///
/// The header is a JSON array of {"name", "dtype" (f32|i32|u8), "shape"}
/// descriptors. An optional trailing {"meta": {...}} element carries free-form
/// metadata and no data.
struct NcofArray {
  std::string name;
  std::variant<TensorF, TensorI, TensorB> data;
};

struct NcofFile {
  std::vector<NcofArray> arrays;
  nlohmann::json meta = nlohmann::json::object();

  const NcofArray* find(const std::string& name) const;
  template <typename T>
  const Tensor<T>& get(const std::string& name) const;
};

std::string encode_ncof(const NcofFile& file);
NcofFile decode_ncof(const std::string& bytes);
void write_ncof(const std::string& path, const NcofFile& file);
NcofFile read_ncof(const std::string& path);

// ---- checkpoints -----------------------------------------------------------------

/// Every entry of a parameter set, prefixed, in set order.
void append_params(NcofFile& file, const ParamSet<float>& params, const std::string& prefix = "");
/// Arrays whose names start with `prefix`, prefix stripped. Arrays are
/// marked trainable unless their name ends in running_mean/running_var.
ParamSet<float> extract_params(const NcofFile& file, const std::string& prefix = "");

void save_checkpoint(const std::string& path, const ParamSet<float>& params, const nlohmann::json& meta = {});
NcofFile load_checkpoint(const std::string& path);
/// Reads a checkpoint straight into an existing set (names and shapes must match).
void load_checkpoint_into(const std::string& path, ParamSet<float>& params, const std::string& prefix = "");

// ---- datasets --------------------------------------------------------------------

NcofFile dataset_file(const InstanceBatch& instances);
InstanceBatch dataset_from(const NcofFile& file);
void write_dataset(const InstanceBatch& instances, const std::string& path);
InstanceBatch read_dataset(const std::string& path);

}  // namespace nco
