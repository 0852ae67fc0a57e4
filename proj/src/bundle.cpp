#include "more/bundle.hpp"

#include <fstream>
#include <sstream>

#include "more/error.hpp"
#include "more/text.hpp"

namespace more {

namespace fs = std::filesystem;
using namespace bundle_files;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing bundle file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string trace_csv(const std::vector<DbgdStepTrace>& traces) {
  std::ostringstream out;
  out << "iteration,epoch,batch,covered,batch_loss,baseline_batch_loss,phi,lambda,interp_dot_task,task_norm_sq\n";
  for (const auto& s : traces) {
    out << s.iteration << ',' << s.epoch << ',' << s.batch << ',' << s.covered << ',' << format_number(s.batch_loss)
        << ',' << format_number(s.baseline_batch_loss) << ',' << format_number(s.phi) << ','
        << format_number(s.lambda) << ',' << format_number(s.interp_dot_task) << ','
        << format_number(s.task_norm_sq) << '\n';
  }
  return out.str();
}

}  // namespace

void save_bundle(const fs::path& dir, const RunState& state, const Dataset& train, const Dataset& test) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create bundle directory " + dir.string() + ": " + ec.message());
  const auto& m = state.model;
  write_json(dir / kSchema, m.schema.to_json());
  write_json(dir / kF, m.f.to_json());
  write_json(dir / kG, m.g.to_json());
  write_json(dir / kBaseline, state.baseline.to_json());
  write_json(dir / kRuleSet, m.rules.to_json(m.schema));
  write_json(dir / kStandardizer, m.standardizer.to_json());

  std::ostringstream metrics;
  write_metrics_csv(metrics, state.metrics);
  write_text(dir / kMetrics, metrics.str());

  auto transcripts = nlohmann::json::array();
  for (const auto& t : state.transcripts) transcripts.push_back(t.to_json(m.schema));
  write_json(dir / kTranscript, transcripts);

  std::ostringstream epochs;
  epochs << "iteration,epoch,train_loss,bound\n";
  for (const auto& e : state.epochs) {
    epochs << e.iteration << ',' << e.epoch << ',' << format_number(e.train_loss) << ',' << format_number(e.bound)
           << '\n';
  }
  write_text(dir / kEpochs, epochs.str());
  write_text(dir / kTrace, trace_csv(state.traces));
  save_csv(dir / kTrain, train);
  save_csv(dir / kTest, test);
}

Bundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("bundle directory not found: " + dir.string());
  Bundle b;
  try {
    auto& m = b.model;
    m.schema = FeatureSchema::from_json(read_json(dir / kSchema));
    m.f = DiffClassifier::from_json(read_json(dir / kF));
    m.g = DiffClassifier::from_json(read_json(dir / kG));
    m.standardizer = Standardizer::from_json(read_json(dir / kStandardizer));
    m.rules = RuleSet::from_json(read_json(dir / kRuleSet), m.schema);
    b.baseline = BaselineSnapshot::from_json(read_json(dir / kBaseline));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("malformed bundle " + dir.string() + ": " + e.what());
  }
  const auto& m = b.model;
  const auto width = m.schema.encoded_width();
  if (m.f.input_dim() != width || m.g.input_dim() != width ||
      m.f.output_dim() != static_cast<std::size_t>(m.schema.num_classes()) || m.g.output_dim() != 2) {
    throw DataError("bundle models do not match the bundle schema");
  }
  if (m.standardizer.moments().size() != m.schema.num_features()) {
    throw DataError("bundle standardizer does not match the bundle schema");
  }
  if (fs::exists(dir / kMetrics)) {
    std::istringstream in(read_text(dir / kMetrics));
    b.metrics = read_metrics_csv(in);
  }
  if (fs::exists(dir / kTranscript)) b.transcripts = read_json(dir / kTranscript);
  return b;
}

std::string read_metrics_text(const fs::path& dir) {
  if (!fs::exists(dir / kMetrics)) throw DataError("bundle has no metrics file: " + (dir / kMetrics).string());
  return read_text(dir / kMetrics);
}

}  // namespace more
