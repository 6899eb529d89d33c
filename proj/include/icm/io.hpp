#pragma once

#include <filesystem>
#include <string>

#include "icm/nn.hpp"
#include "json.hpp"

namespace icm {

using nlohmann::json;

// Named-array container: "ICMA", u32 version, u32 header length, JSON header,
// u32 array count, then per array u16 name length, name, u8 rank,
// u32 dims[rank], float32 data. Little-endian throughout.
struct ArrayFile {
  json header;
  ParamList arrays;

  const Tensor* find(const std::string& name) const;
};

void save_arrays(const std::filesystem::path& path, const json& header, const ParamList& arrays);
ArrayFile load_arrays(const std::filesystem::path& path);

/// Copies values by name into existing tensors. Missing names throw DataError.
void assign_arrays(const ArrayFile& file, const ParamList& dst);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

}  // namespace icm
