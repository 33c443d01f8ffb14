#include "cocola/lora.hpp"

#include "cocola/container.hpp"
#include "cocola/errors.hpp"
#include "cocola/tinylm.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lora {

const LoraAdapter* AdapterSet::find(const std::string& layer_id) const {
    auto it = adapters.find(layer_id);
    return it != adapters.end() ? &it->second : nullptr;
}

AdapterSet attach(const tinylm::TinyLM& model, std::span<const std::string> layer_ids, int rank,
                  double alpha, double init_std, Rng& rng) {
    if (layer_ids.empty()) throw std::invalid_argument("attach: layer_ids must be non-empty");

    std::vector<std::string> unknown;
    for (const auto& id : layer_ids)
        if (!model.has_layer(id)) unknown.push_back(id);
    if (!unknown.empty()) {
        std::ostringstream os;
        os << "attach: unknown layer id(s):";
        for (const auto& id : unknown) os << " " << id;
        throw std::invalid_argument(os.str());
    }
    std::set<std::string> seen;
    for (const auto& id : layer_ids)
        if (!seen.insert(id).second)
            throw std::invalid_argument("attach: duplicate layer id: " + id);

    AdapterSet set;
    // Adapters are created in the order given so that the rng draws are
    // reproducible for a fixed target list.
    for (const auto& id : layer_ids) {
        const Matrix& w = model.weight(id);
        const auto max_rank = std::min(w.rows(), w.cols());
        if (rank < 1 || rank > max_rank) {
            std::ostringstream os;
            os << "attach: rank " << rank << " invalid for layer " << id << " of shape "
               << w.rows() << "x" << w.cols() << " (must be in [1, " << max_rank << "])";
            throw std::invalid_argument(os.str());
        }
        LoraAdapter a;
        a.layer_id = id;
        a.rank = rank;
        a.alpha = alpha;
        a.A = numkit::gaussian(rng, rank, w.cols(), init_std);
        a.B = Matrix::Zero(w.rows(), rank);
        set.adapters.emplace(id, std::move(a));
    }
    return set;
}

Matrix effective_weight(const Matrix& w, const LoraAdapter& adapter) {
    if (adapter.B.rows() != w.rows() || adapter.A.cols() != w.cols() ||
        adapter.B.cols() != adapter.A.rows()) {
        std::ostringstream os;
        os << "effective_weight: shapes do not compose for layer " << adapter.layer_id << ": W is "
           << w.rows() << "x" << w.cols() << ", B is " << adapter.B.rows() << "x"
           << adapter.B.cols() << ", A is " << adapter.A.rows() << "x" << adapter.A.cols();
        throw std::invalid_argument(os.str());
    }
    return w + adapter.scale() * (adapter.B * adapter.A);
}

MergeReceipt merge(tinylm::TinyLM& model, AdapterSet& adapters) {
    if (adapters.consumed)
        throw std::invalid_argument("merge: adapter set was already merged (consumed)");
    if (adapters.empty()) throw std::invalid_argument("merge: empty adapter set");

    MergeReceipt receipt;
    receipt.generation = adapters.generation;
    for (const auto& [id, a] : adapters.adapters) {
        Matrix& w = model.weight(id);
        Matrix eff = effective_weight(w, a);
        receipt.delta_norm[id] = (eff - w).norm();
        w = std::move(eff);
    }
    adapters.consumed = true;
    return receipt;
}

AdapterSet expand(const tinylm::TinyLM& model, std::span<const std::string> layer_ids, int rank,
                  double alpha, double init_std, Rng& rng, int prev_generation) {
    if (prev_generation < 0) throw std::invalid_argument("expand: prev_generation must be >= 0");
    AdapterSet set = attach(model, layer_ids, rank, alpha, init_std, rng);
    set.generation = prev_generation + 1;
    return set;
}

void save_adapters(const AdapterSet& set, const std::filesystem::path& path) {
    if (set.consumed)
        throw std::invalid_argument("save_adapters: adapter set was consumed by merge");
    container::Container c;
    c.set_meta("kind", "adapters");
    c.set_meta("version", "1");
    c.set_meta("generation", std::to_string(set.generation));
    c.set_meta("count", std::to_string(set.adapters.size()));
    for (const auto& [id, a] : set.adapters) {
        c.add(id + "/A", a.A);
        c.add(id + "/B", a.B);
        Matrix alpha(1, 1);
        alpha(0, 0) = a.alpha;
        c.add(id + "/alpha", alpha);
    }
    container::save(c, path);
}

AdapterSet load_adapters(const std::filesystem::path& path) {
    const container::Container c = container::load(path);
    const std::string what = path.string();
    const std::string* kind = c.find_meta("kind");
    if (kind == nullptr || *kind != "adapters")
        throw DataError(what + ": not an adapter checkpoint");

    AdapterSet set;
    const std::string* gen = c.find_meta("generation");
    if (gen == nullptr) throw DataError(what + ": missing generation metadata");
    try {
        set.generation = std::stoi(*gen);
    } catch (const std::exception&) {
        throw DataError(what + ": bad generation metadata");
    }

    for (const auto& e : c.entries) {
        const auto slash = e.name.rfind('/');
        if (slash == std::string::npos || e.name.substr(slash + 1) != "A") continue;
        const std::string id = e.name.substr(0, slash);
        const Matrix* b = c.find(id + "/B");
        const Matrix* alpha = c.find(id + "/alpha");
        if (b == nullptr || alpha == nullptr || alpha->size() != 1)
            throw DataError(what + ": incomplete adapter entry for layer " + id);
        LoraAdapter a;
        a.layer_id = id;
        a.A = e.value;
        a.B = *b;
        a.rank = static_cast<int>(e.value.rows());
        a.alpha = (*alpha)(0, 0);
        if (a.rank < 1 || a.B.cols() != a.rank)
            throw DataError(what + ": inconsistent adapter shapes for layer " + id);
        set.adapters.emplace(id, std::move(a));
    }
    return set;
}

}  // namespace lora
