// SPDX-License-Identifier: Apache-2.0
//
// capengine command line: caption, paragraph, chat and serve.
//
// Exit status: 0 success, 2 usage or configuration error, 3 backend error.
#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>

#include "capengine/backends.hpp"
#include "capengine/chat.hpp"
#include "capengine/config.hpp"
#include "capengine/error.hpp"
#include "capengine/image_codec.hpp"
#include "capengine/paragraph.hpp"
#include "capengine/pipeline.hpp"
#include "capengine/service.hpp"
#include "capengine/text.hpp"
#include "capengine/wire.hpp"

namespace {

using namespace capengine;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitBackend = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_ints(const std::string& text, char sep) {
  std::vector<int> out;
  std::string_view rest = text;
  while (true) {
    const auto cut = rest.find(sep);
    const auto part = trim(rest.substr(0, cut));
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(std::string(part), &used));
      if (used != part.size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw UsageError("not an integer list: '" + text + "'");
    }
    if (cut == std::string_view::npos) break;
    rest.remove_prefix(cut + 1);
  }
  return out;
}

struct CommonOptions {
  std::string image;
  bool mock = false;
  std::string config_path;
  std::string format = "text";
};

struct ControlOptions {
  std::vector<std::string> points;
  std::string box;
  std::string traj;
};

struct StyleOptions {
  std::string sentiment = "neutral";
  std::optional<int> length;
  std::string language = "en";
  std::string factuality = "factual";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool needs_image = true) {
  if (needs_image) cmd->add_option("--image", o.image, "Input image (PNG or JPEG)")->required();
  cmd->add_flag("--mock", o.mock, "Use the deterministic in-process backends");
  cmd->add_option("--config", o.config_path, "key = value configuration file");
  cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"text", "summary", "json"}));
}

void add_control(CLI::App* cmd, ControlOptions& o) {
  cmd->add_option("--point", o.points, "Click X,Y or X,Y,LABEL (label 1 positive, 0 negative); repeatable");
  cmd->add_option("--box", o.box, "Box X0,Y0,X1,Y1");
  cmd->add_option("--traj", o.traj, "Trajectory X1,Y1;X2,Y2;...");
}

void add_style(CLI::App* cmd, StyleOptions& o) {
  cmd->add_option("--sentiment", o.sentiment, "positive | neutral | negative");
  cmd->add_option("--length", o.length, "Maximum caption length in words");
  cmd->add_option("--lang", o.language, "Output language tag");
  cmd->add_option("--factuality", o.factuality, "factual | imagination");
}

VisualControl control_from(const ControlOptions& o) {
  const int given = (o.points.empty() ? 0 : 1) + (o.box.empty() ? 0 : 1) + (o.traj.empty() ? 0 : 1);
  if (given != 1) throw UsageError("give exactly one of --point, --box, --traj");
  if (!o.points.empty()) {
    PointSet set;
    for (const auto& p : o.points) {
      const auto v = parse_ints(p, ',');
      if (v.size() != 2 && v.size() != 3) throw UsageError("--point expects X,Y or X,Y,LABEL");
      const auto label = v.size() == 3 && v[2] == 0 ? PointLabel::kNegative : PointLabel::kPositive;
      set.points.push_back({v[0], v[1], label});
    }
    return set;
  }
  if (!o.box.empty()) {
    const auto v = parse_ints(o.box, ',');
    if (v.size() != 4) throw UsageError("--box expects X0,Y0,X1,Y1");
    return BoxRegion{v[0], v[1], v[2], v[3]};
  }
  Trajectory traj;
  std::string_view rest = o.traj;
  while (!rest.empty()) {
    const auto cut = rest.find(';');
    const auto v = parse_ints(std::string(rest.substr(0, cut)), ',');
    if (v.size() != 2) throw UsageError("--traj expects X1,Y1;X2,Y2;...");
    traj.points.push_back({v[0], v[1]});
    if (cut == std::string_view::npos) break;
    rest.remove_prefix(cut + 1);
  }
  return traj;
}

LanguageControls style_from(const StyleOptions& o) {
  LanguageControls c;
  const auto s = parse_sentiment(o.sentiment);
  if (!s) throw UsageError("unknown sentiment '" + o.sentiment + "'");
  const auto f = parse_factuality(o.factuality);
  if (!f) throw UsageError("unknown factuality '" + o.factuality + "'");
  c.sentiment = *s;
  c.factuality = *f;
  c.length = o.length;
  c.language = o.language;
  validate(c);
  return c;
}

ServiceConfig load_config(const CommonOptions& o) {
  const auto env = capengine_environment();
  return o.config_path.empty() ? parse_service_config("", env) : load_service_config(o.config_path, env);
}

/// `--mock` ignores configured backends; fixtures passed on the command line
/// still apply.
BackendSet backends_from(const CommonOptions& o, const ServiceConfig& cfg, const std::string& refiner_script,
                         const std::string& ocr_fixture) {
  auto configs = o.mock ? std::map<BackendKind, BackendConfig>{} : cfg.backends;
  if (!refiner_script.empty()) {
    auto& r = configs[BackendKind::kRefiner];
    r = BackendConfig{};
    r.kind = BackendKind::kRefiner;
    r.fixture = refiner_script;
  }
  if (!ocr_fixture.empty()) {
    auto& r = configs[BackendKind::kOcr];
    r = BackendConfig{};
    r.kind = BackendKind::kOcr;
    r.fixture = ocr_fixture;
  }
  return make_backends(configs);
}

Verbosity verbosity_of(const std::string& format) {
  if (format == "json") return Verbosity::kFull;
  if (format == "summary") return Verbosity::kSummary;
  return Verbosity::kText;
}

int run_caption(const CommonOptions& common, const ControlOptions& ctl, const StyleOptions& style, bool no_cot,
                bool no_refine) {
  CaptionRequest request;
  request.control = control_from(ctl);
  request.controls = style_from(style);
  request.use_cot = !no_cot;
  request.refine = !no_refine;

  const auto cfg = load_config(common);
  const auto image = load_image(common.image).image;
  const CaptionPipeline pipeline(backends_from(common, cfg, "", ""), pipeline_config(cfg));
  std::cout << render_result(pipeline.caption_object(image, request), verbosity_of(common.format)) << "\n";
  return kExitOk;
}

int run_paragraph(const CommonOptions& common, const StyleOptions& style, std::optional<std::size_t> max_regions,
                  bool cot, const std::string& ocr, const std::string& script) {
  const auto cfg = load_config(common);
  ParagraphOptions options;
  options.max_regions = max_regions.value_or(cfg.max_regions);
  options.use_cot = cot;
  const auto controls = style_from(style);

  const auto image = load_image(common.image).image;
  const ParagraphEngine engine(CaptionPipeline(backends_from(common, cfg, script, ocr), pipeline_config(cfg)),
                               ParagraphConfig{cfg.parallelism, {}});
  const auto result = engine.caption_everything(image, controls, options);
  if (common.format == "text") {
    std::cout << result.paragraph << "\n";
  } else {
    std::cout << to_wire(result).dump() << "\n";
  }
  return kExitOk;
}

int run_chat(const CommonOptions& common, const ControlOptions& ctl, const std::string& script) {
  const auto control = control_from(ctl);
  const auto cfg = load_config(common);
  const auto bytes = read_file_bytes(common.image);
  const auto image = std::make_shared<const RgbImage>(decode_image(bytes).image);
  const auto image_id = sha256_hex(bytes);

  const auto backends = backends_from(common, cfg, script, "");
  const CaptionPipeline pipeline(backends, pipeline_config(cfg));
  CaptionRequest seed;
  seed.control = control;
  seed.use_cot = true;
  seed.refine = false;
  const auto result = pipeline.caption_object(*image, seed);

  ChatEngine engine(backends.refiner, backends.vqa,
                    [&](const std::string& id) { return id == image_id ? image : nullptr; },
                    ChatConfig{cfg.max_tool_calls, cfg.margin_ratio});
  auto session = engine.start_session(image_id, result.mask, result.raw_caption);

  const bool structured = common.format != "text";
  ojson turns = ojson::array();
  std::string line;
  while (std::getline(std::cin, line)) {
    const auto message = trim(line);
    if (message.empty()) continue;
    const auto turn = engine.chat_turn(session, message);
    if (structured) {
      ojson t;
      t["message"] = std::string(message);
      t["reply"] = turn.reply;
      t["tool_calls"] = ojson::array();
      for (const auto& call : turn.tool_calls) t["tool_calls"].push_back(to_wire(call));
      turns.push_back(std::move(t));
    } else {
      std::cout << turn.reply << "\n" << std::flush;
    }
  }
  if (structured) {
    ojson out;
    out["session_id"] = session.id;
    out["seed_caption"] = session.seed_caption;
    out["turns"] = std::move(turns);
    std::cout << out.dump() << "\n";
  }
  return kExitOk;
}

int run_serve(const CommonOptions& common, const std::string& listen) {
  auto cfg = load_config(common);
  if (!listen.empty()) {
    const auto parsed = parse_service_config("listen = " + listen, {});
    cfg.host = parsed.host;
    cfg.port = parsed.port;
  }
  auto backends = common.mock ? make_mock_backends() : make_backends(cfg.backends);

  // Block the stop signals before any thread starts so that only sigwait
  // below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service service(cfg, std::move(backends), &std::cerr);
  const int port = service.start();
  std::cerr << "listening on " << cfg.host << ":" << port << std::endl;

  int received = 0;
  sigwait(&signals, &received);
  std::cerr << "stopping" << std::endl;
  service.stop();
  return kExitOk;
}

int exit_code_for(const Error& e) { return http_status(e.code()) == 502 ? kExitBackend : kExitUsage; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capengine: controllable object captioning"};
  app.require_subcommand(1);

  CommonOptions common;
  ControlOptions control;
  StyleOptions style;
  bool no_cot = false;
  bool no_refine = false;
  bool cot = false;
  std::optional<std::size_t> max_regions;
  std::string ocr;
  std::string script;
  std::string listen;

  auto* caption = app.add_subcommand("caption", "Caption one object selected by a visual control");
  add_common(caption, common);
  add_control(caption, control);
  add_style(caption, style);
  caption->add_flag("--no-cot", no_cot, "Single captioner call on the crop");
  caption->add_flag("--no-refine", no_refine, "Skip the refiner");

  auto* paragraph = app.add_subcommand("paragraph", "Describe the whole image in one paragraph");
  add_common(paragraph, common);
  add_style(paragraph, style);
  paragraph->add_option("--max-regions", max_regions, "Upper bound on captioned regions")
      ->check(CLI::PositiveNumber);
  paragraph->add_flag("--cot", cot, "Use the two-step captioning per region");
  paragraph->add_option("--ocr", ocr, "OCR fixture file for the mock reader");
  paragraph->add_option("--script", script, "Refiner script, one response per line");

  auto* chat = app.add_subcommand("chat", "Chat about one object; messages are read from stdin");
  add_common(chat, common);
  add_control(chat, control);
  chat->add_option("--script", script, "Refiner script, one response per line");

  auto* serve = app.add_subcommand("serve", "Run the HTTP service until SIGINT or SIGTERM");
  add_common(serve, common, false);
  serve->add_option("--listen", listen, "HOST:PORT, overrides the configured listen address");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*caption) return run_caption(common, control, style, no_cot, no_refine);
    if (*paragraph) return run_paragraph(common, style, max_regions, cot, ocr, script);
    if (*chat) return run_chat(common, control, script);
    return run_serve(common, listen);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
