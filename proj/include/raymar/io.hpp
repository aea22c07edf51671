#pragma once

// Shared on-disk format: a plain-text "key: value" header next to a raw
// little-endian binary data file. Volumes and sinograms use float32 elements,
// masks uint8. Reading back what was written is bit-exact.

#include "raymar/core.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace raymar {

inline constexpr const char* kVolumeMagic = "RAYMAR-VOL-1";
inline constexpr const char* kSinogramMagic = "RAYMAR-SINO-1";

namespace detail {

inline void write_raw_f32(const std::filesystem::path& path,
                          const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path.string());
  std::vector<float> buf(values.begin(), values.end());
  f.write(reinterpret_cast<const char*>(buf.data()),
          std::streamsize(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<double> read_raw_f32(const std::filesystem::path& path,
                                        std::size_t count) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path.string());
  std::vector<float> buf(count);
  f.read(reinterpret_cast<char*>(buf.data()),
         std::streamsize(count * sizeof(float)));
  if (std::size_t(f.gcount()) != count * sizeof(float))
    throw std::runtime_error("short read: " + path.string());
  return std::vector<double>(buf.begin(), buf.end());
}

struct Header {
  std::string magic;
  std::map<std::string, std::string> kv;

  const std::string& get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end())
      throw std::runtime_error("missing header key: " + key);
    return it->second;
  }
};

inline Header read_header(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open header: " + path.string());
  Header h;
  std::string line;
  if (!std::getline(f, h.magic))
    throw std::runtime_error("empty header: " + path.string());
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("bad header line: " + line);
    std::string key = line.substr(0, colon);
    std::string val = line.substr(colon + 1);
    while (!val.empty() && val.front() == ' ') val.erase(val.begin());
    h.kv[key] = val;
  }
  return h;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, std::size_t expect = 0) {
  std::istringstream in(s);
  std::vector<T> out;
  T v;
  while (in >> v) out.push_back(v);
  if (expect && out.size() != expect)
    throw std::runtime_error("expected " + std::to_string(expect) +
                             " values in: " + s);
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::filesystem::path sibling(const std::filesystem::path& header,
                                     const std::string& data_file) {
  return header.parent_path() / data_file;
}

}  // namespace detail

inline void write_volume(const std::filesystem::path& header_path,
                         const Volume3D& vol) {
  std::string data_file = header_path.stem().string() + ".raw";
  std::ofstream f(header_path);
  if (!f)
    throw std::runtime_error("cannot open for write: " + header_path.string());
  f << kVolumeMagic << "\n";
  f << "dims: " << vol.dims[0] << " " << vol.dims[1] << " " << vol.dims[2]
    << "\n";
  f << "spacing: " << detail::fmt(vol.spacing.x) << " "
    << detail::fmt(vol.spacing.y) << " " << detail::fmt(vol.spacing.z) << "\n";
  f << "origin: " << detail::fmt(vol.origin.x) << " "
    << detail::fmt(vol.origin.y) << " " << detail::fmt(vol.origin.z) << "\n";
  f << "elem: float32\n";
  f << "byte_order: little-endian\n";
  f << "data_file: " << data_file << "\n";
  detail::write_raw_f32(detail::sibling(header_path, data_file), vol.data);
}

inline Volume3D read_volume(const std::filesystem::path& header_path) {
  auto h = detail::read_header(header_path);
  if (h.magic != kVolumeMagic)
    throw std::runtime_error("not a volume file: " + header_path.string());
  auto d = detail::parse_list<int>(h.get("dims"), 3);
  auto sp = detail::parse_list<double>(h.get("spacing"), 3);
  auto org = detail::parse_list<double>(h.get("origin"), 3);
  if (h.get("elem") != "float32")
    throw std::runtime_error("unsupported elem type: " + h.get("elem"));
  Volume3D vol({d[0], d[1], d[2]}, {sp[0], sp[1], sp[2]},
               {org[0], org[1], org[2]});
  vol.data = detail::read_raw_f32(
      detail::sibling(header_path, h.get("data_file")), vol.size());
  return vol;
}

// Masks reuse the volume format with elem: uint8.
inline void write_mask(const std::filesystem::path& header_path,
                       const BinaryMask3D& mask) {
  std::string data_file = header_path.stem().string() + ".raw";
  std::ofstream f(header_path);
  if (!f)
    throw std::runtime_error("cannot open for write: " + header_path.string());
  f << kVolumeMagic << "\n";
  f << "dims: " << mask.dims[0] << " " << mask.dims[1] << " " << mask.dims[2]
    << "\n";
  f << "spacing: " << detail::fmt(mask.spacing.x) << " "
    << detail::fmt(mask.spacing.y) << " " << detail::fmt(mask.spacing.z)
    << "\n";
  f << "origin: " << detail::fmt(mask.origin.x) << " "
    << detail::fmt(mask.origin.y) << " " << detail::fmt(mask.origin.z) << "\n";
  f << "elem: uint8\n";
  f << "byte_order: little-endian\n";
  f << "data_file: " << data_file << "\n";
  std::ofstream raw(detail::sibling(header_path, data_file), std::ios::binary);
  raw.write(reinterpret_cast<const char*>(mask.data.data()),
            std::streamsize(mask.data.size()));
  if (!raw) throw std::runtime_error("write failed: " + data_file);
}

inline BinaryMask3D read_mask(const std::filesystem::path& header_path) {
  auto h = detail::read_header(header_path);
  if (h.magic != kVolumeMagic)
    throw std::runtime_error("not a volume file: " + header_path.string());
  if (h.get("elem") != "uint8")
    throw std::runtime_error("not a mask (elem != uint8): " +
                             header_path.string());
  auto d = detail::parse_list<int>(h.get("dims"), 3);
  auto sp = detail::parse_list<double>(h.get("spacing"), 3);
  auto org = detail::parse_list<double>(h.get("origin"), 3);
  BinaryMask3D mask;
  mask.dims = {d[0], d[1], d[2]};
  mask.spacing = {sp[0], sp[1], sp[2]};
  mask.origin = {org[0], org[1], org[2]};
  mask.data.resize(mask.size());
  std::ifstream raw(detail::sibling(header_path, h.get("data_file")),
                    std::ios::binary);
  raw.read(reinterpret_cast<char*>(mask.data.data()),
           std::streamsize(mask.data.size()));
  if (std::size_t(raw.gcount()) != mask.data.size())
    throw std::runtime_error("short read: " + header_path.string());
  return mask;
}

inline void write_sinogram(const std::filesystem::path& header_path,
                           const Sinogram& sino) {
  std::string data_file = header_path.stem().string() + ".raw";
  const auto& g = sino.geom;
  std::ofstream f(header_path);
  if (!f)
    throw std::runtime_error("cannot open for write: " + header_path.string());
  f << kSinogramMagic << "\n";
  f << "sad: " << detail::fmt(g.sad) << "\n";
  f << "sdd: " << detail::fmt(g.sdd) << "\n";
  f << "det_bins: " << g.nu << " " << g.nv << "\n";
  f << "det_size: " << detail::fmt(g.wu) << " " << detail::fmt(g.wv) << "\n";
  f << "n_views: " << g.n_views() << "\n";
  f << "angles:";
  for (double a : g.angles) f << " " << detail::fmt(a);
  f << "\n";
  f << "elem: float32\n";
  f << "byte_order: little-endian\n";
  f << "data_file: " << data_file << "\n";
  detail::write_raw_f32(detail::sibling(header_path, data_file), sino.data);
}

inline Sinogram read_sinogram(const std::filesystem::path& header_path) {
  auto h = detail::read_header(header_path);
  if (h.magic != kSinogramMagic)
    throw std::runtime_error("not a sinogram file: " + header_path.string());
  ConeBeamGeometry g;
  g.sad = std::stod(h.get("sad"));
  g.sdd = std::stod(h.get("sdd"));
  auto bins = detail::parse_list<int>(h.get("det_bins"), 2);
  g.nu = bins[0];
  g.nv = bins[1];
  auto sz = detail::parse_list<double>(h.get("det_size"), 2);
  g.wu = sz[0];
  g.wv = sz[1];
  int n_views = std::stoi(h.get("n_views"));
  g.angles = detail::parse_list<double>(h.get("angles"), n_views);
  g.validate();
  if (h.get("elem") != "float32")
    throw std::runtime_error("unsupported elem type: " + h.get("elem"));
  Sinogram sino(g);
  sino.data = detail::read_raw_f32(
      detail::sibling(header_path, h.get("data_file")), sino.data.size());
  return sino;
}

}  // namespace raymar
