#include "stjgcn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <vector>

namespace stjgcn {

namespace {

struct Key {
    std::string name;
    std::string range_doc;
    std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const Key& k, const std::string& v) {
    throw std::runtime_error("config key '" + k.name + "' = '" + v + "' outside legal range " +
                             k.range_doc);
}

int64_t to_int(const std::string& s, bool& ok) {
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    ok = ec == std::errc() && ptr == s.data() + s.size();
    return v;
}

double to_double(const std::string& s, bool& ok) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    ok = ec == std::errc() && ptr == s.data() + s.size();
    return v;
}

std::vector<Key> key_table() {
    auto int_key = [](std::string name, std::string doc, int64_t lo, int64_t hi, auto member) {
        return Key{name, doc, [=](RunConfig& c, const std::string& s) {
                       bool ok;
                       int64_t v = to_int(s, ok);
                       if (!ok || v < lo || v > hi) bad_value(Key{name, doc, nullptr}, s);
                       c.*member = v;
                   }};
    };
    auto dbl_key = [](std::string name, std::string doc, double lo, double hi, auto member) {
        return Key{name, doc, [=](RunConfig& c, const std::string& s) {
                       bool ok;
                       double v = to_double(s, ok);
                       if (!ok || v < lo || v > hi) bad_value(Key{name, doc, nullptr}, s);
                       c.*member = v;
                   }};
    };
    auto str_key = [](std::string name, auto member) {
        return Key{name, "any path", [=](RunConfig& c, const std::string& s) { c.*member = s; }};
    };
    std::vector<Key> keys;
    keys.push_back(int_key("P", "[2, 512]", 2, 512, &RunConfig::window));
    keys.push_back(int_key("Q", "[1, 512]", 1, 512, &RunConfig::horizons));
    keys.push_back(int_key("d", "[1, 1024]", 1, 1024, &RunConfig::hidden));
    keys.push_back(int_key("K", "[1, 8]", 1, 8, &RunConfig::kernel));
    keys.push_back(dbl_key("delta_pdf", "[0, 1)", 0.0, 0.999999999, &RunConfig::delta_pdf));
    keys.push_back(dbl_key("delta_adt", "[-100, 100]", -100.0, 100.0, &RunConfig::delta_adt));
    keys.push_back(dbl_key("beta", "[0, 1000]", 0.0, 1000.0, &RunConfig::beta));
    keys.push_back(dbl_key("lr", "(0, 10]", 1e-12, 10.0, &RunConfig::lr));
    keys.push_back(int_key("batch_size", "[1, 65536]", 1, 65536, &RunConfig::batch_size));
    keys.push_back(int_key("epochs", "[0, 100000]", 0, 100000, &RunConfig::epochs));
    keys.push_back(Key{"seed", "unsigned integer", [](RunConfig& c, const std::string& s) {
                           uint64_t v = 0;
                           auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
                           if (ec != std::errc() || ptr != s.data() + s.size())
                               throw std::runtime_error(
                                   "config key 'seed' = '" + s +
                                   "' outside legal range unsigned integer");
                           c.seed = v;
                       }});
    keys.push_back(Key{"precision", "f32|f64", [](RunConfig& c, const std::string& s) {
                           if (s != "f32" && s != "f64")
                               throw std::runtime_error("config key 'precision' = '" + s +
                                                        "' outside legal range f32|f64");
                           c.precision = s;
                       }});
    keys.push_back(dbl_key("train_frac", "(0, 1)", 1e-9, 0.999999, &RunConfig::train_frac));
    keys.push_back(dbl_key("val_frac", "(0, 1)", 1e-9, 0.999999, &RunConfig::val_frac));
    keys.push_back(dbl_key("grad_clip", "[0, 1e9]", 0.0, 1e9, &RunConfig::grad_clip));
    keys.push_back(dbl_key("sigma", "[0, 1e12]", 0.0, 1e12, &RunConfig::sigma));
    keys.push_back(Key{"strict", "0|1|true|false", [](RunConfig& c, const std::string& s) {
                           if (s == "1" || s == "true") c.strict = true;
                           else if (s == "0" || s == "false") c.strict = false;
                           else
                               throw std::runtime_error("config key 'strict' = '" + s +
                                                        "' outside legal range 0|1|true|false");
                       }});
    keys.push_back(str_key("data", &RunConfig::data));
    keys.push_back(str_key("distances", &RunConfig::distances));
    keys.push_back(str_key("out", &RunConfig::out));
    keys.push_back(str_key("checkpoint", &RunConfig::checkpoint));
    return keys;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

void apply(RunConfig& cfg, const std::string& key, const std::string& value,
           const std::vector<Key>& keys) {
    for (auto& k : keys)
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    throw std::runtime_error("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
    if (train_frac + val_frac >= 1.0)
        throw std::runtime_error("train_frac + val_frac must leave a test share");
    if (window < kernel)
        throw std::runtime_error("P (" + std::to_string(window) + ") must be >= K (" +
                                 std::to_string(kernel) + ")");
}

RunConfig parse_config(const std::optional<std::string>& path,
                       const std::map<std::string, std::string>& overrides) {
    RunConfig cfg;
    auto keys = key_table();
    if (path) {
        std::ifstream is(*path);
        if (!is) throw std::runtime_error("cannot open config file " + *path);
        std::string line;
        int64_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(*path + ":" + std::to_string(lineno) +
                                         ": expected 'key = value'");
            apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), keys);
        }
    }
    for (auto& [k, v] : overrides) apply(cfg, k, v, keys);
    cfg.validate();
    return cfg;
}

}  // namespace stjgcn
