#include "icm/io.hpp"

#include <cstring>
#include <fstream>

#include "icm/errors.hpp"

namespace icm {

namespace {

constexpr char kMagic[4] = {'I', 'C', 'M', 'A'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw DataError("array file truncated");
  std::uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

const Tensor* ArrayFile::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a.tensor;
  }
  return nullptr;
}

void save_arrays(const std::filesystem::path& path, const json& header, const ParamList& arrays) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  const std::string h = header.dump();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put<std::uint16_t>(os, static_cast<std::uint16_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(a.tensor.rank()));
    for (int d : a.tensor.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (float f : a.tensor.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put<std::uint32_t>(os, bits);
    }
  }
  if (!os) throw DataError("write failed for " + path.string());
}

ArrayFile load_arrays(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(path.string() + " is not an array container");
  }
  if (get<std::uint32_t>(is) != kVersion) throw DataError("unsupported array container version");
  ArrayFile file;
  const auto hlen = get<std::uint32_t>(is);
  std::string h(hlen, '\0');
  if (!is.read(h.data(), hlen)) throw DataError("array file truncated");
  try {
    file.header = json::parse(h);
  } catch (const json::exception& e) {
    throw DataError(std::string("bad array file header: ") + e.what());
  }
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto nlen = get<std::uint16_t>(is);
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw DataError("array file truncated");
    const auto rank = get<std::uint8_t>(is);
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(static_cast<int>(get<std::uint32_t>(is)));
    FloatVec values(static_cast<size_t>(shape_numel(shape)));
    for (float& f : values) {
      const auto bits = get<std::uint32_t>(is);
      std::memcpy(&f, &bits, 4);
    }
    file.arrays.push_back({name, Tensor(shape, std::move(values))});
  }
  return file;
}

void assign_arrays(const ArrayFile& file, const ParamList& dst) {
  for (const auto& d : dst) {
    const Tensor* src = file.find(d.name);
    if (!src) throw DataError("array '" + d.name + "' missing from checkpoint");
    if (src->shape() != d.tensor.shape()) {
      throw DataError("array '" + d.name + "' has shape " + shape_str(src->shape()) + ", expected " +
                      shape_str(d.tensor.shape()));
    }
    Tensor t = d.tensor;
    std::copy(src->data().begin(), src->data().end(), t.data().begin());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace icm
