#include <stdio.h>
#include <limits.h>
void process_size_safe(int user_size) {
    int buffer_size = 1000;
    // Fixed: check for potential overflow before calculation
    if (user_size > INT_MAX - buffer_size) {
        printf("Error: Integer overflow risk\n");
        return;
    }
    int total = buffer_size + user_size;
    char buffer[total];
}
