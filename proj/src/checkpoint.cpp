#include "cirs/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cirs::nn {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'R', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

std::string read_str(std::istream& is) {
  std::uint32_t len = read_u32(is);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const StoreRefs& stores) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(stores.size()));
  for (const auto& [name, store] : stores) {
    write_str(os, name);
    write_u64(os, store->size());
    for (std::size_t p = 0; p < store->size(); ++p) {
      write_str(os, store->name(p));
      const Tensor& t = store->value(p);
      write_u32(os, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) write_u64(os, d);
      os.write(reinterpret_cast<const char*>(t.data().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

void load_checkpoint(const std::string& path, const StoreRefs& stores) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: " + path + " has unsupported version " +
                             std::to_string(version));
  }
  std::uint32_t count = read_u32(is);
  if (count != stores.size()) {
    throw std::runtime_error("checkpoint: " + path + " holds " + std::to_string(count) +
                             " stores, expected " + std::to_string(stores.size()));
  }
  for (const auto& [name, store] : stores) {
    std::string got = read_str(is);
    if (got != name) {
      throw std::runtime_error("checkpoint: store name mismatch, file has '" + got +
                               "', expected '" + name + "'");
    }
    std::uint64_t params = read_u64(is);
    if (params != store->size()) {
      throw std::runtime_error("checkpoint: store '" + name + "' holds " +
                               std::to_string(params) + " tensors, expected " +
                               std::to_string(store->size()));
    }
    for (std::size_t p = 0; p < store->size(); ++p) {
      std::string pname = read_str(is);
      if (pname != store->name(p)) {
        throw std::runtime_error("checkpoint: parameter name mismatch in store '" + name +
                                 "', file has '" + pname + "', expected '" + store->name(p) + "'");
      }
      std::uint32_t rank = read_u32(is);
      std::vector<std::size_t> shape(rank);
      for (std::uint32_t d = 0; d < rank; ++d) shape[d] = read_u64(is);
      Tensor& t = store->value(p);
      if (shape != t.shape()) {
        Tensor probe(shape);
        throw std::runtime_error("checkpoint: shape mismatch for '" + name + "/" + pname +
                                 "', file has " + probe.shape_str() + ", expected " +
                                 t.shape_str());
      }
      is.read(reinterpret_cast<char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!is) throw std::runtime_error("checkpoint: truncated file");
    }
  }
}

}  // namespace cirs::nn
