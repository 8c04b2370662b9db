#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "takin/lora.hpp"

namespace takin {

// Name -> adapter map with hot load/unload. In-flight requests pin the
// shared_ptr they resolved at admission; unload only hides the name from
// new requests.
class AdapterRegistry {
public:
    AdapterRegistry(int32_t n_layers, int32_t d_model) : n_layers_(n_layers), d_model_(d_model) {}

    void load(LoraAdapter adapter) {
        tkla_validate_shapes(adapter, n_layers_, d_model_);
        if (adapter.name.empty()) throw std::invalid_argument("registry: adapter name empty");
        const std::string name = adapter.name;
        std::lock_guard lock(mu_);
        adapters_[name] = std::make_shared<const LoraAdapter>(std::move(adapter));
        ++epoch_;
    }

    bool unload(const std::string& name) {
        std::lock_guard lock(mu_);
        const bool erased = adapters_.erase(name) > 0;
        if (erased) ++epoch_;
        return erased;
    }

    std::shared_ptr<const LoraAdapter> resolve(const std::string& name) const {
        std::lock_guard lock(mu_);
        auto it = adapters_.find(name);
        return it == adapters_.end() ? nullptr : it->second;
    }

    std::vector<std::string> names() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        for (const auto& [name, _] : adapters_) out.push_back(name);
        return out;
    }

    int64_t epoch() const {
        std::lock_guard lock(mu_);
        return epoch_;
    }

private:
    int32_t n_layers_;
    int32_t d_model_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const LoraAdapter>> adapters_;
    int64_t epoch_ = 0;
};

} // namespace takin
