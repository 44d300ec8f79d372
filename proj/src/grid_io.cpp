#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mvi/errors.hpp"
#include "mvi/grid.hpp"
#include "json.hpp"

namespace mvi::grid {

namespace {

constexpr char kBinaryMagic[8] = {'M', 'V', 'I', 'P', '2', 'D', 'B', '1'};

void write_tags(const StructuredGrid& g, const std::string& path,
                MeshFormat format) {
  nlohmann::json tags;
  tags["format"] = format == MeshFormat::Ascii ? "ascii" : "binary";
  tags["inlet_i"] = 0;
  tags["outlet_i"] = g.ni - 1;
  tags["lower_wall_j"] = 0;
  tags["upper_wall_j"] = g.nj - 1;
  tags["surface_range"] = {g.surf_begin, g.surf_end};
  tags["surface_arc_fraction"] = g.surface_arc_fraction;
  std::ofstream f(path + ".tags.json");
  if (!f) throw Error("cannot open " + path + ".tags.json for writing");
  f << tags.dump(2) << "\n";
}

void read_tags(StructuredGrid& g, const std::string& path) {
  const std::string tags_path = path + ".tags.json";
  std::ifstream f(tags_path);
  if (!f) throw Error("missing mesh sidecar " + tags_path);
  nlohmann::json tags;
  try {
    f >> tags;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(tags_path, 0, e.what());
  }
  try {
    g.surf_begin = tags.at("surface_range").at(0).get<std::size_t>();
    g.surf_end = tags.at("surface_range").at(1).get<std::size_t>();
    g.surface_arc_fraction =
        tags.at("surface_arc_fraction").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(tags_path, 0, e.what());
  }
}

}  // namespace

void write_mesh(const StructuredGrid& g, const std::string& path,
                MeshFormat format) {
  g.validate();
  if (format == MeshFormat::Ascii) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open " + path + " for writing");
    f << g.ni << " " << g.nj << "\n";
    char buf[32];
    auto block = [&](const std::vector<double>& v) {
      for (std::size_t k = 0; k < v.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", v[k]);
        f << buf << ((k + 1) % 4 == 0 || k + 1 == v.size() ? "\n" : " ");
      }
    };
    block(g.x);
    block(g.y);
  } else {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path + " for writing");
    f.write(kBinaryMagic, sizeof kBinaryMagic);
    const std::uint64_t ni = g.ni, nj = g.nj;
    f.write(reinterpret_cast<const char*>(&ni), 8);
    f.write(reinterpret_cast<const char*>(&nj), 8);
    f.write(reinterpret_cast<const char*>(g.x.data()), g.x.size() * 8);
    f.write(reinterpret_cast<const char*>(g.y.data()), g.y.size() * 8);
  }
  write_tags(g, path, format);
}

StructuredGrid read_mesh(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error("cannot open " + path);
  char magic[8] = {};
  probe.read(magic, 8);
  StructuredGrid g;
  if (probe.gcount() == 8 && std::memcmp(magic, kBinaryMagic, 8) == 0) {
    std::uint64_t ni = 0, nj = 0;
    probe.read(reinterpret_cast<char*>(&ni), 8);
    probe.read(reinterpret_cast<char*>(&nj), 8);
    if (!probe) throw ParseError(path, 16, "truncated binary mesh header");
    g.ni = ni;
    g.nj = nj;
    g.x.resize(ni * nj);
    g.y.resize(ni * nj);
    probe.read(reinterpret_cast<char*>(g.x.data()), g.x.size() * 8);
    probe.read(reinterpret_cast<char*>(g.y.data()), g.y.size() * 8);
    if (!probe)
      throw ParseError(path, 24, "expected " + std::to_string(2 * ni * nj) +
                                     " coordinates, file truncated");
  } else {
    probe.close();
    std::ifstream f(path);
    std::size_t lineno = 1;
    std::string header;
    if (!std::getline(f, header)) throw ParseError(path, 1, "empty mesh file");
    std::istringstream hs(header);
    if (!(hs >> g.ni >> g.nj) || g.ni < 2 || g.nj < 2)
      throw ParseError(path, 1, "expected header 'ni nj'");
    const std::size_t n = g.ni * g.nj;
    g.x.resize(n);
    g.y.resize(n);
    std::size_t count = 0;
    std::string line;
    while (count < 2 * n && std::getline(f, line)) {
      ++lineno;
      std::istringstream ls(line);
      double v;
      while (ls >> v) {
        if (count < n)
          g.x[count] = v;
        else
          g.y[count - n] = v;
        ++count;
        if (count == 2 * n) break;
      }
    }
    if (count != 2 * n)
      throw ParseError(path, lineno,
                       "expected " + std::to_string(2 * n) +
                           " coordinates, found " + std::to_string(count));
  }
  read_tags(g, path);
  g.validate();
  return g;
}

std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  char buf[65536];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace mvi::grid
