#include "ptqkit/ablation.hpp"

#include "ptqkit/error.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace ptqkit {

std::string study_name(AblationStudy s)
{
    switch (s) {
    case AblationStudy::modules: return "modules";
    case AblationStudy::softmax: return "softmax";
    case AblationStudy::layernorm: return "layernorm";
    case AblationStudy::contraction: return "contraction";
    }
    return "?";
}

AblationStudy study_from_name(const std::string& name)
{
    for (auto s : {AblationStudy::modules, AblationStudy::softmax, AblationStudy::layernorm,
                   AblationStudy::contraction}) {
        if (study_name(s) == name)
            return s;
    }
    throw FormatError("unknown ablation study '" + name + "'");
}

std::vector<AblationRow> ablation_grid(AblationStudy study, const QuantConfig& base)
{
    std::vector<AblationRow> rows;
    auto add = [&](std::string name, auto&& tweak) {
        AblationRow r;
        r.name = std::move(name);
        r.config = base;
        tweak(r.config);
        rows.push_back(std::move(r));
    };
    switch (study) {
    case AblationStudy::modules:
        add("neither", [](QuantConfig& c) { c.clip = false; c.gptq = false; });
        add("clip", [](QuantConfig& c) { c.clip = true; c.gptq = false; });
        add("gptq", [](QuantConfig& c) { c.clip = false; c.gptq = true; });
        add("clip+gptq", [](QuantConfig& c) { c.clip = true; c.gptq = true; });
        break;
    case AblationStudy::softmax:
        add("log2", [](QuantConfig& c) { c.softmax = SoftmaxQuantizer::log2; });
        add("logsqrt2", [](QuantConfig& c) { c.softmax = SoftmaxQuantizer::log_sqrt2; });
        break;
    case AblationStudy::layernorm:
        add("layer", [](QuantConfig& c) { c.ln_mode = LnMode::layer; });
        add("channel", [](QuantConfig& c) { c.ln_mode = LnMode::channel; });
        add("reparam", [](QuantConfig& c) { c.ln_mode = LnMode::reparam; });
        break;
    case AblationStudy::contraction:
        add("direct", [](QuantConfig& c) { c.clip = true; c.clip_method = ClipMethod::direct; });
        add("sigmoid", [](QuantConfig& c) { c.clip = true; c.clip_method = ClipMethod::sigmoid; });
        break;
    }
    return rows;
}

std::vector<AblationRow> run_ablation(AblationStudy study, const ToyModel& model, const Tensor& calib,
                                      const Tensor& heldout, const QuantConfig& base, unsigned threads)
{
    std::vector<AblationRow> rows = ablation_grid(study, base);
    const unsigned workers = threads == 0 ? static_cast<unsigned>(rows.size())
                                          : std::min<unsigned>(threads, static_cast<unsigned>(rows.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < rows.size(); i = next++) {
            try {
                const PipelineResult res = run_pipeline(model, calib, rows[i].config);
                rows[i].metrics = evaluate(res.model, model, heldout);
                rows[i].hardware_friendly = res.model.hardware_friendly();
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < workers; ++t)
        pool.emplace_back(work);
    work();
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
    return rows;
}

}  // namespace ptqkit
