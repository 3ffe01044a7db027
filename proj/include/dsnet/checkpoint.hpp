#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dsnet/common.hpp"

namespace dsnet {

/// Flat container of named float32 arrays plus string metadata. On disk it
/// is `<base>.bin` (raw little-endian float32 payload) and `<base>.manifest`
/// (text: metadata, then one line per array with name, shape and byte
/// offset). Round-trips are bit-exact.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };

  void add(const std::string& name, Shape shape, std::vector<float> data) {
    if (index_.count(name)) {
      throw DataError("duplicate checkpoint array '" + name + "'");
    }
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
      throw ShapeError("checkpoint array '" + name + "': " +
                       std::to_string(data.size()) +
                       " values do not fill shape " + shape_str(shape));
    }
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(shape), std::move(data)});
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  const Entry& get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
      throw DataError("checkpoint is missing array '" + name + "'");
    }
    return entries_[it->second];
  }

  const std::vector<Entry>& entries() const { return entries_; }

  void set_meta(const std::string& key, const std::string& value) {
    meta_[key] = value;
  }
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }
  const std::string& meta(const std::string& key) const {
    const auto it = meta_.find(key);
    if (it == meta_.end()) {
      throw DataError("checkpoint is missing metadata key '" + key + "'");
    }
    return it->second;
  }
  std::int64_t meta_int(const std::string& key) const {
    return std::stoll(meta(key));
  }

  void save(const std::string& base) const {
    std::ofstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot write checkpoint payload " + base + ".bin");
    std::ofstream man(base + ".manifest");
    if (!man) throw DataError("cannot write checkpoint manifest " + base +
                              ".manifest");
    man << "dsnet-checkpoint v1\n";
    for (const auto& [k, v] : meta_) man << "meta " << k << "=" << v << "\n";
    std::uint64_t offset = 0;
    for (const auto& e : entries_) {
      man << "array " << e.name << " " << e.shape.size();
      for (auto d : e.shape) man << " " << d;
      man << " " << offset << "\n";
      bin.write(reinterpret_cast<const char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * 4));
      offset += e.data.size() * 4;
    }
    if (!bin || !man) throw DataError("short write saving checkpoint " + base);
  }

  static ParamStore load(const std::string& base) {
    std::ifstream man(base + ".manifest");
    if (!man) throw DataError("cannot open checkpoint manifest " + base +
                              ".manifest");
    std::ifstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw DataError("cannot open checkpoint payload " + base + ".bin");
    bin.seekg(0, std::ios::end);
    const std::uint64_t payload_bytes = static_cast<std::uint64_t>(bin.tellg());

    ParamStore store;
    std::string line;
    if (!std::getline(man, line) || line != "dsnet-checkpoint v1") {
      throw DataError(base + ".manifest: bad magic line '" + line + "'");
    }
    int lineno = 1;
    while (std::getline(man, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream is(line);
      std::string kind;
      is >> kind;
      if (kind == "meta") {
        std::string kv;
        std::getline(is, kv);
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          throw DataError(base + ".manifest:" + std::to_string(lineno) +
                          ": bad meta line");
        }
        // skip the leading space from getline
        std::string key = kv.substr(0, eq);
        if (!key.empty() && key[0] == ' ') key = key.substr(1);
        store.set_meta(key, kv.substr(eq + 1));
      } else if (kind == "array") {
        std::string name;
        std::size_t ndim = 0;
        is >> name >> ndim;
        Shape shape(ndim);
        for (auto& d : shape) is >> d;
        std::uint64_t offset = 0;
        is >> offset;
        if (!is) {
          throw DataError(base + ".manifest:" + std::to_string(lineno) +
                          ": malformed array line");
        }
        const std::uint64_t bytes = static_cast<std::uint64_t>(numel(shape)) * 4;
        if (offset + bytes > payload_bytes) {
          throw DataError(base + ".bin: array '" + name + "' needs bytes [" +
                          std::to_string(offset) + ", " +
                          std::to_string(offset + bytes) +
                          ") but payload has only " +
                          std::to_string(payload_bytes));
        }
        std::vector<float> data(static_cast<std::size_t>(numel(shape)));
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(bytes));
        if (!bin) throw DataError(base + ".bin: short read for '" + name + "'");
        store.add(name, std::move(shape), std::move(data));
      } else {
        throw DataError(base + ".manifest:" + std::to_string(lineno) +
                        ": unknown record '" + kind + "'");
      }
    }
    return store;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::string> meta_;
};

}  // namespace dsnet
