#pragma once

// Versioned binary checkpoint: JSON header followed by named float64
// tensors in sorted order. Values are written as raw IEEE-754 bytes, so
// load(save(x)) reproduces outputs bit-exactly and identical training runs
// produce byte-identical files.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "dpl/nn/tensor.hpp"

namespace dpl::model {

constexpr char kCheckpointMagic[8] = {'D', 'P', 'L', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
    nlohmann::json header;
    std::map<std::string, nn::Tensor> tensors;  // sorted by name

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) fail("Checkpoint::save: cannot open " + path);
        out.write(kCheckpointMagic, 8);
        const std::string hdr = header.dump();
        const std::uint64_t hlen = hdr.size();
        out.write(reinterpret_cast<const char*>(&hlen), 8);
        out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
        const std::uint64_t count = tensors.size();
        out.write(reinterpret_cast<const char*>(&count), 8);
        for (const auto& [name, t] : tensors) {
            const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
            out.write(reinterpret_cast<const char*>(&nlen), 4);
            out.write(name.data(), nlen);
            const std::uint32_t ndim = static_cast<std::uint32_t>(t.shape.size());
            out.write(reinterpret_cast<const char*>(&ndim), 4);
            for (int d : t.shape) {
                const std::int64_t dd = d;
                out.write(reinterpret_cast<const char*>(&dd), 8);
            }
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        }
        if (!out) fail("Checkpoint::save: write failed for " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) fail("Checkpoint::load: cannot open " + path);
        char magic[8];
        in.read(magic, 8);
        if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
            fail("Checkpoint::load: not a checkpoint file: " + path);
        std::uint64_t hlen = 0;
        in.read(reinterpret_cast<char*>(&hlen), 8);
        std::string hdr(hlen, '\0');
        in.read(hdr.data(), static_cast<std::streamsize>(hlen));
        Checkpoint ck;
        try {
            ck.header = nlohmann::json::parse(hdr);
        } catch (const std::exception& e) {
            fail("Checkpoint::load: corrupt header: " + std::string(e.what()));
        }
        std::uint64_t count = 0;
        in.read(reinterpret_cast<char*>(&count), 8);
        for (std::uint64_t i = 0; i < count; ++i) {
            std::uint32_t nlen = 0;
            in.read(reinterpret_cast<char*>(&nlen), 4);
            std::string name(nlen, '\0');
            in.read(name.data(), nlen);
            std::uint32_t ndim = 0;
            in.read(reinterpret_cast<char*>(&ndim), 4);
            std::vector<int> shape(ndim);
            for (auto& d : shape) {
                std::int64_t dd = 0;
                in.read(reinterpret_cast<char*>(&dd), 8);
                d = static_cast<int>(dd);
            }
            nn::Tensor t(shape);
            in.read(reinterpret_cast<char*>(t.data.data()),
                    static_cast<std::streamsize>(t.data.size() * sizeof(double)));
            if (!in) fail("Checkpoint::load: truncated tensor data in " + path);
            ck.tensors.emplace(std::move(name), std::move(t));
        }
        return ck;
    }
};

}  // namespace dpl::model
