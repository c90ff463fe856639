#pragma once

// Umbrella header. The HTTP front end lives in condrec/service.hpp and is
// not included here because it pulls in cpp-httplib.

#include "condrec/binary_io.hpp"
#include "condrec/commands.hpp"
#include "condrec/error.hpp"
#include "condrec/eval.hpp"
#include "condrec/fingerprint.hpp"
#include "condrec/hash.hpp"
#include "condrec/index.hpp"
#include "condrec/ingest.hpp"
#include "condrec/model.hpp"
#include "condrec/recommend.hpp"
#include "condrec/reprkernel.hpp"
#include "condrec/smiles.hpp"
#include "condrec/synthetic.hpp"
#include "condrec/tensor_file.hpp"
#include "condrec/version.hpp"
