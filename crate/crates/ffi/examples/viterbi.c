/* Decodes a random potential array through the C API.
 *
 *   cargo build --release -p spanslot-ffi
 *   cc crates/ffi/examples/viterbi.c -Icrates/ffi/include \
 *      -Ltarget/release -lspanslot_ffi -o viterbi
 *   LD_LIBRARY_PATH=target/release ./viterbi
 */
#include <stdio.h>
#include <stdlib.h>

#include "spanslot.h"

#define STEPS 6

int main(void) {
    double pots[STEPS * SPANSLOT_STEP_WIDTH];
    uint8_t tags[STEPS];
    double log_z;
    static const char *names[] = {"BEF", "BEG", "IN", "AFT"};

    srand(7);
    for (int i = 0; i < STEPS * SPANSLOT_STEP_WIDTH; i++)
        pots[i] = 6.0 * rand() / RAND_MAX - 3.0;

    if (spanslot_crf_log_partition(pots, STEPS, &log_z) != SPANSLOT_STATUS_OK ||
        spanslot_crf_viterbi(pots, STEPS, true, tags) != SPANSLOT_STATUS_OK) {
        fprintf(stderr, "spanslot: %s\n", spanslot_last_error_message());
        return 1;
    }
    printf("spanslot %s, log Z = %.6f\n", spanslot_version(), log_z);
    for (int t = 0; t < STEPS; t++)
        printf("%s%s", t ? " " : "", names[tags[t]]);
    printf("\n");
    return 0;
}
