#include "uld/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "uld/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");

namespace uld {

namespace {
constexpr char kMagic[4] = {'N', 'T', 'C', 'K'};
constexpr int kFormatVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::map<std::string, std::string>& attrs) {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["attrs"] = attrs;
    nlohmann::json list = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, tensor] : tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = tensor.shape();
        e["dtype"] = "f64";
        e["offset"] = offset;
        list.push_back(std::move(e));
        offset += tensor.size();
    }
    manifest["tensors"] = std::move(list);
    const std::string mtext = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    const std::uint32_t mlen = static_cast<std::uint32_t>(mtext.size());
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    for (const auto& [name, tensor] : tensors) {
        out.write(reinterpret_cast<const char*>(tensor.data().data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    }
    if (!out) throw DataError("short write while saving checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    std::uint32_t mlen = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("not a checkpoint file: " + path);

    std::string mtext(mlen, '\0');
    in.read(mtext.data(), mlen);
    if (!in) throw DataError("truncated checkpoint manifest: " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format_version", -1) != kFormatVersion) {
        throw DataError("unsupported checkpoint format_version in " + path);
    }

    Checkpoint ck;
    if (manifest.contains("attrs"))
        ck.attrs_ = manifest["attrs"].get<std::map<std::string, std::string>>();

    std::size_t total = 0;
    for (const auto& e : manifest["tensors"]) {
        Entry entry;
        entry.shape = e["shape"].get<Shape>();
        entry.offset = e["offset"].get<std::size_t>();
        if (e.value("dtype", "") != "f64")
            throw DataError("checkpoint tensor `" + e["name"].get<std::string>() +
                            "` has unsupported dtype");
        if (entry.offset != total)
            throw DataError("checkpoint manifest offsets are not contiguous");
        total += shape_numel(entry.shape);
        ck.index_.emplace(e["name"].get<std::string>(), std::move(entry));
    }

    ck.payload_.resize(total);
    in.read(reinterpret_cast<char*>(ck.payload_.data()),
            static_cast<std::streamsize>(total * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != total * sizeof(double))
        throw DataError("truncated checkpoint payload: " + path);
    // trailing garbage is also rejected
    char extra;
    in.read(&extra, 1);
    if (!in.eof()) throw DataError("checkpoint payload longer than manifest declares: " + path);
    return ck;
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    out.reserve(index_.size());
    for (const auto& [name, entry] : index_) out.push_back(name);
    return out;
}

const Shape& Checkpoint::shape(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw DataError("checkpoint has no tensor named " + name);
    return it->second.shape;
}

Tensor Checkpoint::tensor(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw DataError("checkpoint has no tensor named " + name);
    const std::size_t n = shape_numel(it->second.shape);
    std::vector<double> data(payload_.begin() + static_cast<std::ptrdiff_t>(it->second.offset),
                             payload_.begin() + static_cast<std::ptrdiff_t>(it->second.offset + n));
    return Tensor::from_data(it->second.shape, std::move(data));
}

}  // namespace uld
