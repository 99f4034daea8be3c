#pragma once

#include <map>
#include <string>
#include <vector>

#include "uld/tensor.hpp"

namespace uld {

// Named-tensor container: 4-byte magic "NTCK", a little-endian uint32 with
// the manifest length, a JSON manifest (format_version, attrs, per-tensor
// name/shape/dtype/offset), then the concatenated raw little-endian f64
// payloads. Offsets are relative to the payload start.

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::map<std::string, std::string>& attrs = {});

class Checkpoint {
  public:
    // Throws DataError on bad magic, unsupported format_version, or a
    // truncated/oversized payload.
    static Checkpoint load(const std::string& path);

    const std::map<std::string, std::string>& attrs() const { return attrs_; }
    std::vector<std::string> names() const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Shape& shape(const std::string& name) const;
    // Copies the payload out as a tensor; throws DataError for unknown names.
    Tensor tensor(const std::string& name) const;

  private:
    struct Entry {
        Shape shape;
        std::size_t offset;  // element offset into payload_
    };
    std::map<std::string, Entry> index_;
    std::map<std::string, std::string> attrs_;
    std::vector<double> payload_;
};

}  // namespace uld
