#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "hydrotype/congruence.hpp"
#include "hydrotype/hodograph.hpp"
#include "hydrotype/laplace.hpp"
#include "hydrotype/system.hpp"

namespace ht {

/** Parses the plain-text system format:
 *
 *    # comment
 *    n = 2
 *    lambda.l1 = u2
 *    lambda.l2 = u1
 *    domain.u1 = [1.5, 3]
 *    domain.u2 = [0.2, 1.2]
 *    tol = 1e-9          (optional, with eps_hyp, samples, seed, name)
 *
 * ParseError positions are 1-based line numbers.
 */
DiagonalSystem parse_system_text(const std::string& text, const std::string& origin);

DiagonalSystem load_system_file(const std::string& path);

std::vector<std::string> builtin_names();
bool is_builtin(const std::string& name);
DiagonalSystem builtin_system(const std::string& name);

/** Raw definition text of a built-in; what data/<name>.sys ships. */
std::string builtin_system_text(const std::string& name);

/** Accepts either a built-in name or a path to a definition file. */
DiagonalSystem resolve_system(const std::string& name_or_path);

/** JSON mirror of the diagnostics report. Keys are emitted alphabetically and
 *  all numbers deterministically, so equal configurations give equal bytes. */
nlohmann::json diagnostics_json(const DiagnosticsReport& rep);

nlohmann::json system_json(const DiagonalSystem& sys);

nlohmann::json sequence_json(const SequenceResult& res);

nlohmann::json laplace_step_json(const LaplaceStep& step);

nlohmann::json verify_json(const VerifyReport& rep);

/** Route summary without the raw field; pair it with solution_csv. */
nlohmann::json pipeline_json(const PipelineResult& res);

nlohmann::json speed_invariance_json(const SpeedInvarianceReport& rep);

/** Columns x,t,u1..un,converged,iterations,residual; t varies slowest.
 *  Doubles round-trip exactly; missing residuals print as nan. */
std::string solution_csv(const SolutionGrid& grid);

/** Inverse of solution_csv. Accepts rows in any order as long as they cover
 *  a full uniform lattice; throws ParseError otherwise. */
SolutionGrid parse_solution_csv(const std::string& text, const std::string& origin);

/** Columns u1..un,value,valid in flat lattice order. */
std::string scalar_field_csv(const ScalarFieldGrid& field);

/** Columns u1..un,y0..yn,valid in flat lattice order. */
std::string focal_chart_csv(const FocalChart& chart);

/** Indexed triangle mesh of a two-parameter chart: `v y0 y1 y2` vertex lines
 *  followed by `f a b c` faces (1-based). Cells touching a masked node are
 *  dropped. Only defined for n = 2. */
std::string focal_chart_mesh(const FocalChart& chart);

/** Plot script for the external plotting tool; expects the CSV beside it. */
std::string gnuplot_script(const std::string& csv_name, const SolutionGrid& grid);

}  // namespace ht
