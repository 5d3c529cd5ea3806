#ifndef FITPATH_PIPELINE_HPP
#define FITPATH_PIPELINE_HPP

#include <string>
#include <utility>

#include "fitpath/data.hpp"
#include "fitpath/model.hpp"
#include "fitpath/runconfig.hpp"

namespace fitpath {

// Command bodies behind the `fitpath` CLI; each writes its artifacts under
// cfg.run_dir plus a manifest, and throws on failure (the CLI maps the error
// taxonomy to exit codes).

Model build_model_for(const RunConfig& cfg);
std::pair<Dataset, Dataset> load_dataset_for(const RunConfig& cfg);

void cmd_train(const RunConfig& cfg);
void cmd_compress(const RunConfig& cfg);
void cmd_finetune(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_ablate(const RunConfig& cfg, const std::string& kind);
void cmd_report(const RunConfig& cfg);

}  // namespace fitpath

#endif
