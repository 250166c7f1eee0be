#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "stjgcn/array.hpp"

namespace stjgcn {

/// One serialized array: raw little-endian payload plus its manifest entry.
struct NamedBlob {
    std::string name;
    std::string dtype;  // "f32" | "f64"
    Shape shape;
    std::vector<uint8_t> bytes;
};

/// Checkpoint container: magic "STJGCN1", a JSON manifest of named arrays
/// with shapes and dtypes, then the raw payloads in manifest order.
/// save(load(x)) is byte-identical.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedBlob> arrays;

    template <typename T>
    void add(const std::string& name, const Array<T>& a) {
        NamedBlob b;
        b.name = name;
        b.dtype = sizeof(T) == 8 ? "f64" : "f32";
        b.shape = a.shape;
        b.bytes.resize(a.data.size() * sizeof(T));
        std::memcpy(b.bytes.data(), a.data.data(), b.bytes.size());
        arrays.push_back(std::move(b));
    }

    bool has(const std::string& name) const {
        for (auto& b : arrays)
            if (b.name == name) return true;
        return false;
    }

    template <typename T>
    Array<T> get(const std::string& name) const {
        for (auto& b : arrays) {
            if (b.name != name) continue;
            const char* want = sizeof(T) == 8 ? "f64" : "f32";
            if (b.dtype != want)
                throw std::runtime_error("checkpoint array '" + name + "' has dtype " + b.dtype +
                                         ", expected " + want);
            Array<T> a(b.shape);
            std::memcpy(a.data.data(), b.bytes.data(), b.bytes.size());
            return a;
        }
        throw std::runtime_error("checkpoint is missing array '" + name + "'");
    }

    /// Cast-reading regardless of stored dtype (for f64-stored side data).
    template <typename T>
    Array<T> get_cast(const std::string& name) const {
        for (auto& b : arrays) {
            if (b.name != name) continue;
            Array<T> a(b.shape);
            if (b.dtype == "f64") {
                const double* src = reinterpret_cast<const double*>(b.bytes.data());
                for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(src[i]);
            } else {
                const float* src = reinterpret_cast<const float*>(b.bytes.data());
                for (int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(src[i]);
            }
            return a;
        }
        throw std::runtime_error("checkpoint is missing array '" + name + "'");
    }

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

}  // namespace stjgcn
