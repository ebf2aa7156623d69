import rigidflow.suites.geometry_suite as geometry_suite
import rigidflow.suites.rigid_suite as rigid_suite
import rigidflow.suites.fluid_suite as fluid_suite
import rigidflow.suites.measure_suite as measure_suite
import rigidflow.suites.transform_suite as transform_suite
import rigidflow.suites.diagnostics_suite as diagnostics_suite


SUITES = {
    geometry_suite.SUITE_LABEL: geometry_suite,
    rigid_suite.SUITE_LABEL: rigid_suite,
    fluid_suite.SUITE_LABEL: fluid_suite,
    measure_suite.SUITE_LABEL: measure_suite,
    transform_suite.SUITE_LABEL: transform_suite,
    diagnostics_suite.SUITE_LABEL: diagnostics_suite,
}

ALL_SUITES = "all"

AVAILABLE_SUITES = list(SUITES) + [ALL_SUITES]
